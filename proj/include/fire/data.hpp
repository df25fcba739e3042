/*
 * firereg : joint synthesis and registration networks
 *
 * Copyright 2026 The firereg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Synthetic two-modality phantoms and random ground-truth warps.
//
// A phantom is one random smooth geometry (an outer ellipsoid, an inner
// core and a stem-like protrusion) rendered under two invertible intensity
// mappings. Both renderings share their label masks exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "fire/rng.hpp"
#include "fire/tensor.hpp"
#include "fire/volume.hpp"
#include "fire/warp.hpp"

namespace fire {

inline const std::array<std::string, 3> kStructures{"cortex", "core", "stem"};

struct IntensityStyle {
  enum class Kind { identity, inverted_gamma } kind = Kind::identity;
  double gamma = 0.7;

  /// Invertible map of [-1, 1] onto itself.
  double apply(double v) const {
    if (kind == Kind::identity) return v;
    const double t = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
    return 1.0 - 2.0 * std::pow(t, gamma);
  }

  friend bool operator==(const IntensityStyle&, const IntensityStyle&) = default;
};

struct PerturbationSpec {
  double lo = 0.2;                // fractional change, lower bound
  double hi = 0.5;                // fractional change, upper bound
  bool include_nonrigid = true;
  double nonrigid_amplitude = 0.06;    // normalized units, before the fold-free cap
  std::size_t nonrigid_smoothness = 5; // control points per axis
  std::uint64_t seed = 0;
  double max_rotation_deg = 10.0;
  double secondary_scale = 0.1;   // |scale - 1| bound on non-primary axes
  double translation_jitter = 0.05;  // |t| bound as a fraction of the axis extent
  double translation_share = 0.0;    // probability that the primary change is a translation

  void validate() const {
    if (!(lo >= 0.0 && lo <= hi && hi < 1.0)) throw std::invalid_argument("PerturbationSpec: need 0 <= lo <= hi < 1");
    if (!(nonrigid_amplitude >= 0.0 && nonrigid_amplitude < 1.0))
      throw std::invalid_argument("PerturbationSpec: nonrigid_amplitude must lie in [0, 1)");
    if (nonrigid_smoothness < 3) throw std::invalid_argument("PerturbationSpec: control grid needs >= 3 points per axis");
    if (!(translation_share >= 0.0 && translation_share <= 1.0))
      throw std::invalid_argument("PerturbationSpec: translation_share must lie in [0, 1]");
    if (max_rotation_deg < 0.0 || secondary_scale < 0.0 || secondary_scale >= 1.0 || translation_jitter < 0.0)
      throw std::invalid_argument("PerturbationSpec: negative or out-of-range secondary range");
  }
};

// ---------------------------------------------------------------------------
// Phantoms

namespace data_detail {

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> radius{1, 1, 1};
  double angle = 0;  // rotation in the plane of the last two axes

  /// Implicit value, < 1 inside.
  double level(const std::array<double, 3>& p, std::size_t n) const {
    std::array<double, 3> d{};
    for (std::size_t a = 0; a < n; ++a) d[a] = p[a] - center[a];
    if (n >= 2) {
      const std::size_t i = n - 2, j = n - 1;
      const double c = std::cos(angle), s = std::sin(angle);
      const double u = c * d[i] + s * d[j], v = -s * d[i] + c * d[j];
      d[i] = u;
      d[j] = v;
    }
    double r = 0;
    for (std::size_t a = 0; a < n; ++a) r += (d[a] / radius[a]) * (d[a] / radius[a]);
    return r;
  }
};

/// Smooth 0..1 membership with a transition about one voxel wide.
inline double soft(double level, double width) {
  const double x = (1.0 - level) / width;
  return 1.0 / (1.0 + std::exp(-4.0 * x));
}

}  // namespace data_detail

/// Renders one random phantom under two intensity styles. Images are in
/// [-1, 1] with unit spacing; every spatial extent equals `size`.
inline std::pair<Volume, Volume> generate_phantom_pair(std::uint64_t seed, std::size_t dim, std::size_t size,
                                                       const IntensityStyle& style_a, const IntensityStyle& style_b) {
  using data_detail::Ellipsoid;
  if (dim != 2 && dim != 3) throw std::invalid_argument("generate_phantom_pair: dim must be 2 or 3");
  if (size < 16) throw std::invalid_argument("generate_phantom_pair: size must be >= 16");
  Rng rng(seed);
  const std::size_t n = dim;

  Ellipsoid outer, core, stem;
  for (std::size_t a = 0; a < n; ++a) {
    outer.center[a] = rng.uniform(-0.04, 0.04);
    outer.radius[a] = rng.uniform(0.34, 0.44);
  }
  outer.radius[0] = rng.uniform(0.28, 0.33);  // leave room for the stem along axis 0
  outer.center[0] -= 0.08;
  outer.angle = rng.uniform(-0.3, 0.3);
  for (std::size_t a = 0; a < n; ++a) {
    core.center[a] = outer.center[a] + rng.uniform(-0.04, 0.04);
    core.radius[a] = outer.radius[a] * rng.uniform(0.42, 0.55);
  }
  core.angle = outer.angle + rng.uniform(-0.3, 0.3);
  stem.center = outer.center;
  stem.center[0] = outer.center[0] + outer.radius[0] * rng.uniform(0.9, 1.0);
  if (n >= 2) stem.center[n - 1] += rng.uniform(-0.05, 0.05);
  stem.radius[0] = rng.uniform(0.18, 0.22);
  for (std::size_t a = 1; a < n; ++a) stem.radius[a] = rng.uniform(0.14, 0.18);
  stem.angle = rng.uniform(-0.15, 0.15);

  const double tex_amp = rng.uniform(0.08, 0.14);
  std::array<double, 3> freq{}, phase{};
  for (std::size_t a = 0; a < n; ++a) {
    freq[a] = rng.uniform(2.5, 5.0);
    phase[a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double v_cortex = rng.uniform(0.0, 0.2);
  const double v_core = rng.uniform(0.6, 0.8);
  const double v_stem = rng.uniform(-0.5, -0.3);

  Shape sp(n, size);
  Shape full{1};
  full.insert(full.end(), sp.begin(), sp.end());
  const std::size_t N = product(sp);
  Tensor<float> base(full);
  std::array<Mask, 3> masks{Mask(full), Mask(full), Mask(full)};
  const double width = 2.0 / double(size - 1) * 1.5;

  for (std::size_t q = 0; q < N; ++q) {
    std::array<double, 3> p{};
    std::size_t rem = q;
    for (std::size_t a = n; a-- > 0;) {
      p[a] = -1.0 + 2.0 * double(rem % size) / double(size - 1);
      rem /= size;
    }
    const double lo = outer.level(p, n), lc = core.level(p, n), ls = stem.level(p, n);
    const bool in_outer = lo < 1.0, in_core = lc < 1.0, in_stem = ls < 1.0;
    masks[1][q] = in_core;
    masks[0][q] = in_outer && !in_core;
    masks[2][q] = in_stem && !in_outer;

    const double so = data_detail::soft(lo, width), sc = data_detail::soft(lc, width), ss = data_detail::soft(ls, width);
    double tex = 1.0;
    for (std::size_t a = 0; a < n; ++a) tex *= std::sin(freq[a] * p[a] + phase[a]);
    const double head = std::max(so, ss);
    double v = -1.0;
    v += head * (v_stem + 1.0);                    // stem level everywhere inside the head
    v += so * (v_cortex - v_stem);                 // outer ellipsoid overrides the stem
    v += sc * so * (v_core - v_cortex);            // core inside the outer ellipsoid
    v += head * tex_amp * tex;
    base[q] = float(std::clamp(v, -1.0, 1.0));
  }

  auto render = [&](const IntensityStyle& st) {
    Volume vol;
    vol.image = base;
    for (auto& x : vol.image.data()) x = float(st.apply(double(x)));
    vol.spacing.assign(n, 1.0);
    for (std::size_t s = 0; s < kStructures.size(); ++s) vol.labels.emplace(kStructures[s], masks[s]);
    return vol;
  };
  return {render(style_a), render(style_b)};
}

/// Default modality pair: A as rendered, B inverted with a gamma curve.
inline std::pair<Volume, Volume> generate_phantom_pair(std::uint64_t seed, std::size_t dim, std::size_t size) {
  return generate_phantom_pair(seed, dim, size, IntensityStyle{}, IntensityStyle{IntensityStyle::Kind::inverted_gamma, 0.7});
}

// ---------------------------------------------------------------------------
// Perturbations

/// Random backward-map affine: rotation * per-axis scale + translation.
/// One primary axis receives a change with magnitude in [lo, hi]: a scale
/// change |s - 1|, or (with probability translation_share) a translation of
/// that fraction of the axis extent.
template <typename T = float>
AffineMatrix<T> random_affine(const PerturbationSpec& spec, std::size_t dim, Rng& rng) {
  spec.validate();
  const std::size_t n = dim;
  std::vector<double> scale(n), trans(n);
  for (std::size_t a = 0; a < n; ++a) {
    scale[a] = 1.0 + rng.sign() * rng.uniform(0.0, spec.secondary_scale);
    trans[a] = rng.uniform(-1.0, 1.0) * spec.translation_jitter * 2.0;
  }
  const std::size_t primary = rng.index(n);
  const double mag = rng.uniform(spec.lo, spec.hi);
  if (rng.uniform() < spec.translation_share)
    trans[primary] = rng.sign() * mag * 2.0;
  else
    scale[primary] = 1.0 + rng.sign() * mag;

  const double max_rad = spec.max_rotation_deg * std::numbers::pi / 180.0;
  // Rotation as a product of plane rotations.
  std::vector<double> R(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) R[a * n + a] = 1.0;
  auto rotate = [&](std::size_t i, std::size_t j, double ang) {
    const double c = std::cos(ang), s = std::sin(ang);
    for (std::size_t r = 0; r < n; ++r) {
      const double ri = R[r * n + i], rj = R[r * n + j];
      R[r * n + i] = c * ri - s * rj;
      R[r * n + j] = s * ri + c * rj;
    }
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) rotate(i, j, rng.uniform(-max_rad, max_rad));

  AffineMatrix<T> A = AffineMatrix<T>::identity(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) A.at(r, c) = T(R[r * n + c] * scale[c]);
    A.at(r, n) = T(trans[r]);
  }
  return A;
}

template <typename T = float>
AffineMatrix<T> random_affine(const PerturbationSpec& spec, std::size_t dim) {
  Rng rng(spec.seed);
  return random_affine<T>(spec, dim, rng);
}

/// True when some axis of A changes by a fraction in [lo, hi]: a column norm
/// of the linear part (axis scale) or a translation relative to the axis
/// extent of 2 normalized units.
template <typename T>
bool meets_strength(const AffineMatrix<T>& A, double lo, double hi) {
  const double tol = 1e-6;
  for (std::size_t c = 0; c < A.n; ++c) {
    double s = 0;
    for (std::size_t r = 0; r < A.n; ++r) s += double(A.at(r, c)) * double(A.at(r, c));
    const double ch = std::abs(std::sqrt(s) - 1.0);
    if (ch >= lo - tol && ch <= hi + tol) return true;
    const double t = std::abs(double(A.at(c, A.n))) / 2.0;
    if (t >= lo - tol && t <= hi + tol) return true;
  }
  return false;
}

/// Largest control-point amplitude that keeps p + u(p) fold-free.
inline double fold_free_amplitude(std::size_t control, std::size_t dim) {
  const double pitch = 2.0 / double(control - 1);
  return 0.9 * pitch / (2.0 * double(dim));
}

/// Random control-grid displacements (uniform within +-amplitude, capped by
/// fold_free_amplitude) linearly upsampled to `shape`.
template <typename T = float>
DisplacementField<T> random_smooth_field(const PerturbationSpec& spec, const Shape& shape, Rng& rng) {
  spec.validate();
  const std::size_t n = shape.size();
  const std::size_t c = spec.nonrigid_smoothness;
  const double amp = std::min(spec.nonrigid_amplitude, fold_free_amplitude(c, n));
  Shape cs{n};
  for (std::size_t a = 0; a < n; ++a) cs.push_back(c);
  Tensor<T> ctrl(cs);
  for (auto& v : ctrl.data()) v = T(rng.uniform(-amp, amp));
  Tape<T> tape(false);
  return DisplacementField<T>(ops::resize_linear(tape.constant(ctrl), shape).value());
}

template <typename T = float>
DisplacementField<T> random_smooth_field(const PerturbationSpec& spec, const Shape& shape) {
  Rng rng(spec.seed);
  return random_smooth_field<T>(spec, shape, rng);
}

/// A ground-truth perturbation and the volume it produced.
struct Perturbed {
  Volume volume;
  AffineMatrix<float> affine;
  DisplacementField<float> field;
  Tensor<float> grid;
};

/// Warps the image linearly and the masks by nearest neighbour through the
/// composed backward map A [p + u(p); 1].
inline Perturbed apply_ground_truth_warp(const Volume& v, const AffineMatrix<float>& A, const DisplacementField<float>& u) {
  const Shape sp = v.spatial();
  if (A.n != sp.size() || u.rank() != sp.size())
    throw ShapeError("apply_ground_truth_warp: transform rank does not match volume " + to_string(v.image.shape()));
  Perturbed out{Volume{}, A, u, compose(A, u, sp)};
  out.volume.image = warp_linear(v.image, out.grid);
  out.volume.spacing = v.spacing;
  for (const auto& [name, m] : v.labels) out.volume.labels.emplace(name, warp_nearest(m, out.grid));
  return out;
}

/// Draws (A, u) from the spec with `rng` and applies them.
inline Perturbed perturb(const Volume& v, const PerturbationSpec& spec, Rng& rng) {
  const Shape sp = v.spatial();
  AffineMatrix<float> A = random_affine<float>(spec, sp.size(), rng);
  DisplacementField<float> u =
      spec.include_nonrigid ? random_smooth_field<float>(spec, sp, rng) : DisplacementField<float>::zeros(sp);
  return apply_ground_truth_warp(v, A, u);
}

}  // namespace fire
