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

// Spatial transformations on normalized coordinates.
//
// Every spatial axis of extent E is mapped to [-1, 1] with align-corners
// semantics: index i sits at -1 + 2i/(E-1). A sampling grid is a backward
// map stored as [n, spatial...]: component k holds the coordinate along
// spatial axis k at which the input is read, so output(p) = input(grid(p)).

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fire/autodiff.hpp"
#include "fire/ops.hpp"
#include "fire/tensor.hpp"

namespace fire {

enum class Border { clamp, zeros };

/// n x (n+1) matrix acting on homogeneous normalized coordinates.
template <typename T>
struct AffineMatrix {
  std::size_t n = 2;
  std::vector<T> entries;

  AffineMatrix() : AffineMatrix(identity(2)) {}
  AffineMatrix(std::size_t rank, std::vector<T> e) : n(rank), entries(std::move(e)) {
    if (n < 1 || n > 3) throw ShapeError("AffineMatrix: rank must be 1, 2 or 3");
    if (entries.size() != n * (n + 1))
      throw ShapeError("AffineMatrix: rank " + std::to_string(n) + " needs " + std::to_string(n * (n + 1)) +
                       " entries, got " + std::to_string(entries.size()));
    for (auto v : entries)
      if (!std::isfinite(double(v))) throw NumericalError("AffineMatrix: non-finite entry");
  }

  static AffineMatrix identity(std::size_t rank) {
    std::vector<T> e(rank * (rank + 1), T(0));
    for (std::size_t i = 0; i < rank; ++i) e[i * (rank + 1) + i] = T(1);
    return AffineMatrix(rank, std::move(e));
  }

  static AffineMatrix from_tensor(const Tensor<T>& t) {
    if (t.rank() != 2 || t.dim(1) != t.dim(0) + 1)
      throw ShapeError("AffineMatrix: tensor shape " + to_string(t.shape()) + " is not n x (n+1)");
    return AffineMatrix(t.dim(0), t.storage());
  }

  T& at(std::size_t r, std::size_t c) { return entries[r * (n + 1) + c]; }
  T at(std::size_t r, std::size_t c) const { return entries[r * (n + 1) + c]; }

  Tensor<T> tensor() const { return Tensor<T>({n, n + 1}, entries); }

  /// Determinant of the linear part.
  double linear_det() const {
    auto a = [&](std::size_t r, std::size_t c) { return double(at(r, c)); };
    if (n == 1) return a(0, 0);
    if (n == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
  }

  /// Inverse backward map.
  AffineMatrix inverse() const {
    const double det = linear_det();
    if (std::abs(det) < 1e-12) throw NumericalError("AffineMatrix: singular linear part");
    std::vector<double> inv(n * n);
    auto a = [&](std::size_t r, std::size_t c) { return double(at(r, c)); };
    if (n == 1) {
      inv[0] = 1.0 / det;
    } else if (n == 2) {
      inv = {a(1, 1) / det, -a(0, 1) / det, -a(1, 0) / det, a(0, 0) / det};
    } else {
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
          const std::size_t r1 = (c + 1) % 3, r2 = (c + 2) % 3, c1 = (r + 1) % 3, c2 = (r + 2) % 3;
          inv[r * 3 + c] = (a(r1, c1) * a(r2, c2) - a(r1, c2) * a(r2, c1)) / det;
        }
    }
    AffineMatrix out = identity(n);
    for (std::size_t r = 0; r < n; ++r) {
      double t = 0;
      for (std::size_t c = 0; c < n; ++c) {
        out.at(r, c) = T(inv[r * n + c]);
        t -= inv[r * n + c] * a(c, n);
      }
      out.at(r, n) = T(t);
    }
    return out;
  }
};

/// Matrix whose grid equals sampling through `first` and then through
/// `second`: x(first(second(p))).
template <typename T>
AffineMatrix<T> sequential(const AffineMatrix<T>& first, const AffineMatrix<T>& second) {
  if (first.n != second.n) throw ShapeError("sequential: rank mismatch");
  const std::size_t n = first.n;
  AffineMatrix<T> out = AffineMatrix<T>::identity(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c <= n; ++c) {
      double s = c == n ? double(first.at(r, n)) : 0.0;
      for (std::size_t k = 0; k < n; ++k) s += double(first.at(r, k)) * double(second.at(k, c));
      out.at(r, c) = T(s);
    }
  return out;
}

/// Per-grid-point displacement vectors [n, grid...] in normalized units.
template <typename T>
struct DisplacementField {
  Tensor<T> vectors;

  DisplacementField() = default;
  explicit DisplacementField(Tensor<T> v) : vectors(std::move(v)) {
    if (vectors.rank() < 2 || vectors.dim(0) != vectors.rank() - 1)
      throw ShapeError("DisplacementField: expected [n, grid...] with n spatial axes, got " + to_string(vectors.shape()));
    if (!vectors.all_finite()) throw NumericalError("DisplacementField: non-finite component");
  }
  static DisplacementField zeros(const Shape& grid_shape) {
    Shape s{grid_shape.size()};
    s.insert(s.end(), grid_shape.begin(), grid_shape.end());
    return DisplacementField(Tensor<T>(s));
  }

  std::size_t rank() const { return vectors.dim(0); }
  Shape grid_shape() const { return spatial_of(vectors.shape()); }
};

/// Backward-map coordinates [n, spatial...].
template <typename T>
struct SampleGrid {
  Tensor<T> coords;

  std::size_t rank() const { return coords.dim(0); }
  Shape shape() const { return spatial_of(coords.shape()); }
};

namespace warp_detail {

inline std::array<std::size_t, 3> strides_of(const Shape& spatial) {
  std::array<std::size_t, 3> st{0, 0, 0};
  std::size_t s = 1;
  for (std::size_t a = spatial.size(); a-- > 0;) {
    st[a] = s;
    s *= spatial[a];
  }
  return st;
}

/// Continuous index along one axis and its derivative w.r.t. the
/// normalized coordinate, after applying the border policy.
struct AxisSample {
  long i0 = 0, i1 = 0;
  double f = 0;
  double dfdp = 0;
  bool in0 = true, in1 = true;
};

template <typename T>
AxisSample axis_sample(T p, std::size_t extent, Border border) {
  AxisSample s;
  if (extent == 1) {
    s.in0 = s.in1 = border == Border::clamp || std::abs(double(p)) <= 1.0;
    return s;
  }
  const double scale = 0.5 * double(extent - 1);
  double x = (double(p) + 1.0) * scale;
  s.dfdp = scale;
  const double tol = 16.0 * double(std::numeric_limits<T>::epsilon()) * double(extent - 1);
  const double r = std::round(x);
  if (std::abs(x - r) <= tol) x = r;
  if (border == Border::clamp) {
    if (x <= 0.0) {
      if (x < 0.0) s.dfdp = 0;
      x = 0.0;
    } else if (x >= double(extent - 1)) {
      // Last node: right-hand cell is the clamp region.
      s.i0 = s.i1 = long(extent) - 1;
      s.dfdp = 0;
      return s;
    }
    s.i0 = std::min<long>(long(std::floor(x)), long(extent) - 2);
    s.i1 = s.i0 + 1;
    s.f = x - double(s.i0);
    return s;
  }
  s.i0 = long(std::floor(x));
  s.i1 = s.i0 + 1;
  s.f = x - double(s.i0);
  s.in0 = s.i0 >= 0 && s.i0 < long(extent);
  s.in1 = s.i1 >= 0 && s.i1 < long(extent);
  return s;
}

}  // namespace warp_detail

/// Align-corners identity grid for the given spatial extents (each >= 2).
template <typename T>
Tensor<T> identity_grid(const Shape& spatial) {
  const std::size_t n = spatial.size();
  if (n < 1 || n > 3) throw ShapeError("identity_grid: spatial rank must be 1..3, got " + to_string(spatial));
  for (auto e : spatial)
    if (e < 2) throw ShapeError("identity_grid: every extent must be >= 2, got " + to_string(spatial));
  Shape s{n};
  s.insert(s.end(), spatial.begin(), spatial.end());
  Tensor<T> g(s);
  const std::size_t count = product(spatial);
  const auto st = warp_detail::strides_of(spatial);
  for (std::size_t q = 0; q < count; ++q)
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t i = (q / st[a]) % spatial[a];
      g[a * count + q] = T(-1.0 + 2.0 * double(i) / double(spatial[a] - 1));
    }
  return g;
}

/// p' = A [p; 1] applied to every point of `grid`.
template <typename T>
Var<T> affine_apply(Var<T> A, Var<T> grid) {
  const Shape& gs = grid.shape();
  const std::size_t n = gs.at(0);
  if (A.shape() != Shape{n, n + 1})
    throw ShapeError("affine_apply: matrix " + to_string(A.shape()) + " does not match grid " + to_string(gs));
  const std::size_t count = grid.value().size() / n;
  Tensor<T> out(gs);
  const T* a = A.value().ptr();
  const T* g = grid.value().ptr();
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t q = 0; q < count; ++q) {
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += a[k * (n + 1) + j] * g[j * count + q];
      out[k * count + q] = acc + a[k * (n + 1) + n];
    }
  return A.tape->push(std::move(out), {A, grid}, [A, grid, n, count](Tape<T>& t, std::size_t self) {
    const T* go = t.grad(self).ptr();
    const T* g = t.value(grid.id).ptr();
    if (t.requires_grad(A.id)) {
      T* ga = t.grad(A.id).ptr();
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t q = 0; q < count; ++q) {
          const T v = go[k * count + q];
          for (std::size_t j = 0; j < n; ++j) ga[k * (n + 1) + j] += v * g[j * count + q];
          ga[k * (n + 1) + n] += v;
        }
    }
    if (t.requires_grad(grid.id)) {
      const T* a = t.value(A.id).ptr();
      T* gg = t.grad(grid.id).ptr();
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < n; ++j) {
          const T c = a[k * (n + 1) + j];
          for (std::size_t q = 0; q < count; ++q) gg[j * count + q] += c * go[k * count + q];
        }
    }
  }, "affine_apply");
}

/// Grid of an affine backward map over `spatial`.
template <typename T>
Var<T> affine_grid(Var<T> A, const Shape& spatial) {
  if (A.shape().at(0) != spatial.size())
    throw ShapeError("affine_grid: matrix " + to_string(A.shape()) + " does not match spatial shape " + to_string(spatial));
  return affine_apply(A, A.tape->constant(identity_grid<T>(spatial)));
}

/// p' = p + u(p), with u linearly resized to `spatial` first.
template <typename T>
Var<T> displacement_grid(Var<T> u, const Shape& spatial) {
  if (u.shape().at(0) != spatial.size())
    throw ShapeError("displacement_grid: field " + to_string(u.shape()) + " does not match spatial shape " + to_string(spatial));
  Var<T> up = ops::resize_linear(u, spatial);
  return ops::add(up, u.tape->constant(identity_grid<T>(spatial)));
}

/// Single composed backward map p' = A [p + u(p); 1].
template <typename T>
Var<T> compose(Var<T> A, Var<T> u, const Shape& spatial) {
  if (A.shape().at(0) != u.shape().at(0)) throw ShapeError("compose: rank mismatch between matrix and field");
  return affine_apply(A, displacement_grid(u, spatial));
}

/// Multi-linear interpolation of image [C, spatial...] at grid [n, out...].
/// Differentiable w.r.t. both image values and grid coordinates.
template <typename T>
Var<T> sample(Var<T> image, Var<T> grid, Border border = Border::clamp) {
  const Shape& is = image.shape();
  const Shape& gs = grid.shape();
  const std::size_t n = is.size() - 1;
  if (gs.size() != is.size() || gs[0] != n)
    throw ShapeError("sample: grid " + to_string(gs) + " does not match image " + to_string(is));
  const Shape in_sp = spatial_of(is);
  const Shape out_sp = spatial_of(gs);
  const std::size_t C = is[0];
  const std::size_t Nin = product(in_sp);
  const std::size_t Nout = product(out_sp);
  const std::size_t corners = std::size_t{1} << n;
  const auto st = warp_detail::strides_of(in_sp);

  // Per output point: corner offsets (or -1 when outside) and axis samples.
  struct Point {
    std::array<long, 8> off;
    std::array<warp_detail::AxisSample, 3> ax;
  };
  std::vector<Point> pts(Nout);
  const T* g = grid.value().ptr();
  for (std::size_t q = 0; q < Nout; ++q) {
    Point& pt = pts[q];
    for (std::size_t a = 0; a < n; ++a) pt.ax[a] = warp_detail::axis_sample(g[a * Nout + q], in_sp[a], border);
    for (std::size_t b = 0; b < corners; ++b) {
      long off = 0;
      bool inside = true;
      for (std::size_t a = 0; a < n; ++a) {
        const bool hi = (b >> a) & 1u;
        const auto& s = pt.ax[a];
        inside = inside && (hi ? s.in1 : s.in0);
        off += (hi ? s.i1 : s.i0) * long(st[a]);
      }
      pt.off[b] = inside ? off : -1;
    }
  }

  Shape os{C};
  os.insert(os.end(), out_sp.begin(), out_sp.end());
  Tensor<T> out(os);
  const T* img = image.value().ptr();
  std::array<T, 8> v{};
  for (std::size_t c = 0; c < C; ++c) {
    const T* ic = img + c * Nin;
    T* oc = out.ptr() + c * Nout;
    for (std::size_t q = 0; q < Nout; ++q) {
      const Point& pt = pts[q];
      for (std::size_t b = 0; b < corners; ++b) v[b] = pt.off[b] >= 0 ? ic[pt.off[b]] : T(0);
      // Nested lerp, highest axis first; exact for constants and at f = 0.
      for (std::size_t a = n; a-- > 0;) {
        const std::size_t half = std::size_t{1} << a;
        const T f = T(pt.ax[a].f);
        for (std::size_t b = 0; b < half; ++b) v[b] = v[b] + f * (v[b + half] - v[b]);
      }
      oc[q] = v[0];
    }
  }

  return image.tape->push(std::move(out), {image, grid},
                          [image, grid, pts = std::move(pts), n, C, Nin, Nout, corners](Tape<T>& t, std::size_t self) {
    const T* go = t.grad(self).ptr();
    const bool gimg = t.requires_grad(image.id);
    const bool ggrid = t.requires_grad(grid.id);
    T* di = gimg ? t.grad(image.id).ptr() : nullptr;
    T* dg = ggrid ? t.grad(grid.id).ptr() : nullptr;
    const T* img = t.value(image.id).ptr();
    for (std::size_t q = 0; q < Nout; ++q) {
      const auto& pt = pts[q];
      std::array<double, 8> w{};
      std::array<std::array<double, 8>, 3> dw{};
      for (std::size_t b = 0; b < corners; ++b) {
        double prod = 1.0;
        for (std::size_t a = 0; a < n; ++a) {
          const bool hi = (b >> a) & 1u;
          prod *= hi ? pt.ax[a].f : 1.0 - pt.ax[a].f;
        }
        w[b] = prod;
        for (std::size_t k = 0; k < n; ++k) {
          double d = ((b >> k) & 1u) ? 1.0 : -1.0;
          for (std::size_t a = 0; a < n; ++a) {
            if (a == k) continue;
            const bool hi = (b >> a) & 1u;
            d *= hi ? pt.ax[a].f : 1.0 - pt.ax[a].f;
          }
          dw[k][b] = d * pt.ax[k].dfdp;
        }
      }
      std::array<double, 3> acc{0, 0, 0};
      for (std::size_t c = 0; c < C; ++c) {
        const T gq = go[c * Nout + q];
        if (gq == T(0)) continue;
        for (std::size_t b = 0; b < corners; ++b) {
          if (pt.off[b] < 0) continue;
          if (gimg) di[c * Nin + pt.off[b]] += T(w[b] * double(gq));
          if (ggrid) {
            const double val = double(img[c * Nin + pt.off[b]]) * double(gq);
            for (std::size_t k = 0; k < n; ++k) acc[k] += dw[k][b] * val;
          }
        }
      }
      if (ggrid)
        for (std::size_t k = 0; k < n; ++k) dg[k * Nout + q] += T(acc[k]);
    }
  }, "sample");
}

/// Sum over interior points and components of the squared discrete
/// Laplacian (unit grid spacing) of a field [n, grid...].
template <typename T>
Var<T> bending_energy(Var<T> u) {
  const Shape& s = u.shape();
  if (s.size() < 2) throw ShapeError("bending_energy: expected [n, grid...], got " + to_string(s));
  const Shape sp = spatial_of(s);
  for (auto e : sp)
    if (e < 3) throw ShapeError("bending_energy: every grid extent must be >= 3, got " + to_string(s));
  const std::size_t r = sp.size();
  const std::size_t N = product(sp);
  const std::size_t C = s[0];
  const auto st = warp_detail::strides_of(sp);

  std::vector<std::size_t> interior;
  for (std::size_t q = 0; q < N; ++q) {
    bool ok = true;
    for (std::size_t a = 0; a < r && ok; ++a) {
      const std::size_t i = (q / st[a]) % sp[a];
      ok = i >= 1 && i + 1 < sp[a];
    }
    if (ok) interior.push_back(q);
  }
  std::vector<T> lap(C * interior.size());
  double energy = 0;
  const T* v = u.value().ptr();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < interior.size(); ++k) {
      const std::size_t q = interior[k];
      const T* vc = v + c * N;
      double L = 0;
      for (std::size_t a = 0; a < r; ++a) L += double(vc[q + st[a]]) - 2.0 * double(vc[q]) + double(vc[q - st[a]]);
      lap[c * interior.size() + k] = T(L);
      energy += L * L;
    }
  return u.tape->push(Tensor<T>({1}, T(energy)), {u},
                      [u, interior = std::move(interior), lap = std::move(lap), C, N, r, st](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    T* gu = t.grad(u.id).ptr();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < interior.size(); ++k) {
        const std::size_t q = interior[k];
        const T d = T(2) * lap[c * interior.size() + k] * g;
        T* gc = gu + c * N;
        for (std::size_t a = 0; a < r; ++a) {
          gc[q + st[a]] += d;
          gc[q - st[a]] += d;
          gc[q] -= T(2) * d;
        }
      }
  }, "bending_energy");
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers

/// Linear warp without recording gradients.
template <typename T>
Tensor<T> warp_linear(const Tensor<T>& image, const Tensor<T>& grid, Border border = Border::clamp) {
  Tape<T> tape(false);
  return sample(tape.constant(image), tape.constant(grid), border).value();
}

/// Nearest-neighbour warp; preserves the value set of `image` (e.g. binary
/// masks). Coordinates outside the image clamp to the edge.
template <typename T, typename U>
Tensor<U> warp_nearest(const Tensor<U>& image, const Tensor<T>& grid) {
  const Shape& is = image.shape();
  const Shape& gs = grid.shape();
  const std::size_t n = is.size() - 1;
  if (gs.size() != is.size() || gs[0] != n)
    throw ShapeError("warp_nearest: grid " + to_string(gs) + " does not match image " + to_string(is));
  const Shape in_sp = spatial_of(is);
  const Shape out_sp = spatial_of(gs);
  const std::size_t Nin = product(in_sp), Nout = product(out_sp), C = is[0];
  const auto st = warp_detail::strides_of(in_sp);
  Shape os{C};
  os.insert(os.end(), out_sp.begin(), out_sp.end());
  Tensor<U> out(os);
  for (std::size_t q = 0; q < Nout; ++q) {
    long off = 0;
    for (std::size_t a = 0; a < n; ++a) {
      const double E = double(in_sp[a]);
      double x = (double(grid[a * Nout + q]) + 1.0) * 0.5 * (E - 1.0);
      x = std::clamp(x, 0.0, E - 1.0);
      off += long(std::floor(x + 0.5)) * long(st[a]);
    }
    for (std::size_t c = 0; c < C; ++c) out[c * Nout + q] = image[c * Nin + std::size_t(off)];
  }
  return out;
}

template <typename T>
Tensor<T> affine_grid(const AffineMatrix<T>& A, const Shape& spatial) {
  Tape<T> tape(false);
  return affine_grid(tape.constant(A.tensor()), spatial).value();
}

template <typename T>
Tensor<T> displacement_grid(const DisplacementField<T>& u, const Shape& spatial) {
  Tape<T> tape(false);
  return displacement_grid(tape.constant(u.vectors), spatial).value();
}

template <typename T>
Tensor<T> compose(const AffineMatrix<T>& A, const DisplacementField<T>& u, const Shape& spatial) {
  Tape<T> tape(false);
  return compose(tape.constant(A.tensor()), tape.constant(u.vectors), spatial).value();
}

template <typename T>
T bending_energy(const DisplacementField<T>& u) {
  Tape<T> tape(false);
  return bending_energy(tape.constant(u.vectors)).value()[0];
}

/// Determinant of the central-difference Jacobian of p -> grid(p) at each
/// interior point (normalized units). Axes of extent 2 use a forward
/// difference at index 0. Returns a map over the interior extents.
template <typename T>
Tensor<double> jacobian_det_map(const Tensor<T>& grid) {
  const Shape& gs = grid.shape();
  const std::size_t n = gs.at(0);
  const Shape sp = spatial_of(gs);
  if (sp.size() != n || n < 1 || n > 3) throw ShapeError("jacobian_det_map: expected [n, spatial...], got " + to_string(gs));
  for (auto e : sp)
    if (e < 2) throw ShapeError("jacobian_det_map: every extent must be >= 2, got " + to_string(gs));
  const std::size_t N = product(sp);
  const auto st = warp_detail::strides_of(sp);
  Shape ms;
  for (auto e : sp) ms.push_back(e >= 3 ? e - 2 : 1);
  Tensor<double> out(ms);
  const auto mst = warp_detail::strides_of(ms);
  const std::size_t M = product(ms);
  for (std::size_t m = 0; m < M; ++m) {
    std::size_t q = 0;
    std::array<std::size_t, 3> idx{};
    for (std::size_t a = 0; a < n; ++a) {
      const std::size_t j = (m / mst[a]) % ms[a];
      idx[a] = sp[a] >= 3 ? j + 1 : 0;
      q += idx[a] * st[a];
    }
    std::array<std::array<double, 3>, 3> J{};
    for (std::size_t j = 0; j < n; ++j) {
      const double h = 2.0 / double(sp[j] - 1);
      std::size_t lo = q, hi = q;
      double span;
      if (sp[j] >= 3) {
        lo = q - st[j];
        hi = q + st[j];
        span = 2.0 * h;
      } else {
        hi = q + st[j];
        span = h;
      }
      for (std::size_t k = 0; k < n; ++k) J[k][j] = (double(grid[k * N + hi]) - double(grid[k * N + lo])) / span;
    }
    double det;
    if (n == 1)
      det = J[0][0];
    else if (n == 2)
      det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
    else
      det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) - J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
            J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
    out[m] = det;
  }
  return out;
}

}  // namespace fire
