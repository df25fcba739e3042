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

// Registration quality metrics, the repeat-N evaluation protocol and the
// timing table.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fire/data.hpp"
#include "fire/model.hpp"
#include "fire/volume.hpp"
#include "fire/warp.hpp"

namespace fire {

/// 2|A∩B| / (|A| + |B|); 1 when both masks are empty.
inline double dice(const Mask& a, const Mask& b) {
  if (a.shape() != b.shape()) throw ShapeError("dice: mask shapes differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > 1 || b[i] > 1) throw std::invalid_argument("dice: masks must be binary (0/1)");
    na += a[i];
    nb += b[i];
    both += a[i] & b[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

/// Index range kept on one axis after removing `margin` of the extent at
/// each end (at least one point survives).
inline std::pair<std::size_t, std::size_t> interior_range(std::size_t extent, double margin) {
  std::size_t cut = std::size_t(std::floor(double(extent) * margin));
  if (2 * cut >= extent) cut = (extent - 1) / 2;
  return {cut, extent - cut};
}

/// RMS(x, x o phi_fwd o phi_bwd) over an interior crop, for one direction.
template <typename T>
double inverse_consistency_residual(const Tensor<T>& x, const Tensor<T>& grid_fwd, const Tensor<T>& grid_bwd,
                                    double margin = 0.1) {
  if (grid_fwd.shape() != grid_bwd.shape())
    throw ShapeError("inverse_consistency_residual: grid shapes differ " + to_string(grid_fwd.shape()) + " vs " +
                     to_string(grid_bwd.shape()));
  const Shape sp = spatial_of(x.shape());
  if (spatial_of(grid_fwd.shape()) != sp || grid_fwd.dim(0) != sp.size())
    throw ShapeError("inverse_consistency_residual: grid " + to_string(grid_fwd.shape()) + " does not fit image " +
                     to_string(x.shape()));
  const Tensor<T> round = warp_linear(warp_linear(x, grid_fwd), grid_bwd);
  const std::size_t n = sp.size(), N = product(sp), C = x.dim(0);
  std::vector<std::pair<std::size_t, std::size_t>> keep(n);
  for (std::size_t a = 0; a < n; ++a) keep[a] = interior_range(sp[a], margin);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t q = 0; q < N; ++q) {
    std::size_t rem = q;
    bool inside = true;
    for (std::size_t a = n; a-- > 0;) {
      const std::size_t i = rem % sp[a];
      rem /= sp[a];
      inside = inside && i >= keep[a].first && i < keep[a].second;
    }
    if (!inside) continue;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = double(x[c * N + q]) - double(round[c * N + q]);
      sum += d * d;
    }
    count += C;
  }
  return std::sqrt(sum / double(count));
}

/// Share of interior points whose Jacobian determinant is positive.
template <typename T>
double jacobian_positive_fraction(const Tensor<T>& grid) {
  const Tensor<double> J = jacobian_det_map(grid);
  std::size_t pos = 0;
  for (double v : J.data()) pos += v > 0.0;
  return double(pos) / double(J.size());
}

/// Affine stage only: encoder plus the affine subnet.
template <typename T>
AffineMatrix<T> predict_affine_matrix(const Volume& moving, const Volume& fixed, const FireModel<T>& m,
                                      Direction dir = Direction::ab) {
  Tape<T> t(false);
  Var<T> gm = encode(t, m, t.constant(moving.image.template cast<T>()));
  Var<T> gf = encode(t, m, t.constant(fixed.image.template cast<T>()));
  return AffineMatrix<T>::from_tensor(predict_affine(t, m, dir, gm, gf).value());
}

// ---------------------------------------------------------------------------
// Evaluation protocol

/// A held-out pair: A-modality source (to be perturbed) and B-modality fixed.
struct EvalCase {
  std::string id;
  Volume source, fixed;
};

struct MeanStd {
  double mean = 0, std = 0;
  std::size_t n = 0;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= double(v.size());
  if (v.size() < 2) return r;
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / double(v.size() - 1));
  return r;
}

struct EvalRow {
  std::string case_id;
  std::size_t repeat = 0;
  std::map<std::string, std::array<double, 3>> dice;  // unaligned, affine-only, full
  double ic_residual = 0;
  double jacobian_positive_fraction = 0;
  double seconds_affine = 0, seconds_full = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> structures;
  std::map<std::string, std::array<MeanStd, 3>> per_structure;
  std::array<MeanStd, 3> overall;  // across structures and rows
  MeanStd ic_residual, jacobian_positive_fraction, seconds_affine, seconds_full;
  double jacobian_positive_min = 1.0;

  /// Recomputes every aggregate from `rows`.
  void aggregate() {
    per_structure.clear();
    std::array<std::vector<double>, 3> all;
    for (const auto& s : structures) {
      std::array<std::vector<double>, 3> cols;
      for (const auto& r : rows)
        for (int k = 0; k < 3; ++k) {
          cols[k].push_back(r.dice.at(s)[k]);
          all[k].push_back(r.dice.at(s)[k]);
        }
      for (int k = 0; k < 3; ++k) per_structure[s][k] = mean_std(cols[k]);
    }
    for (int k = 0; k < 3; ++k) overall[k] = mean_std(all[k]);
    std::vector<double> ic, jac, ta, tf;
    jacobian_positive_min = 1.0;
    for (const auto& r : rows) {
      ic.push_back(r.ic_residual);
      jac.push_back(r.jacobian_positive_fraction);
      ta.push_back(r.seconds_affine);
      tf.push_back(r.seconds_full);
      jacobian_positive_min = std::min(jacobian_positive_min, r.jacobian_positive_fraction);
    }
    ic_residual = mean_std(ic);
    jacobian_positive_fraction = mean_std(jac);
    seconds_affine = mean_std(ta);
    seconds_full = mean_std(tf);
  }

  std::string csv() const {
    std::ostringstream os;
    os << "case,repeat,structure,dice_unaligned,dice_affine_only,dice_full,ic_residual,jacobian_positive_fraction,"
          "seconds_affine,seconds_full\n";
    char buf[256];
    for (const auto& r : rows)
      for (const auto& s : structures) {
        const auto& d = r.dice.at(s);
        std::snprintf(buf, sizeof buf, "%s,%zu,%s,%.6f,%.6f,%.6f,%.6e,%.6f,%.6f,%.6f\n", r.case_id.c_str(), r.repeat,
                      s.c_str(), d[0], d[1], d[2], r.ic_residual, r.jacobian_positive_fraction, r.seconds_affine,
                      r.seconds_full);
        os << buf;
      }
    return os.str();
  }

  std::string text() const {
    std::ostringstream os;
    char buf[256];
    os << "Dice x100, mean (std) over all case x repeat rows (n = " << rows.size() << ")\n";
    std::snprintf(buf, sizeof buf, "%-12s %16s %16s %16s\n", "structure", "unaligned", "affine-only", "full");
    os << buf;
    auto cell = [](const MeanStd& m) {
      char c[32];
      std::snprintf(c, sizeof c, "%.1f (%.1f)", 100 * m.mean, 100 * m.std);
      return std::string(c);
    };
    for (const auto& s : structures) {
      const auto& p = per_structure.at(s);
      std::snprintf(buf, sizeof buf, "%-12s %16s %16s %16s\n", s.c_str(), cell(p[0]).c_str(), cell(p[1]).c_str(),
                    cell(p[2]).c_str());
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%-12s %16s %16s %16s\n", "mean", cell(overall[0]).c_str(), cell(overall[1]).c_str(),
                  cell(overall[2]).c_str());
    os << buf;
    std::snprintf(buf, sizeof buf, "inverse-consistency residual: %.4e (%.4e)\n", ic_residual.mean, ic_residual.std);
    os << buf;
    std::snprintf(buf, sizeof buf, "jacobian-positive fraction: mean %.6f, min %.6f\n", jacobian_positive_fraction.mean,
                  jacobian_positive_min);
    os << buf;
    std::snprintf(buf, sizeof buf, "seconds per registration: affine %.4f (%.4f), full %.4f (%.4f)\n", seconds_affine.mean,
                  seconds_affine.std, seconds_full.mean, seconds_full.std);
    os << buf;
    return os.str();
  }
};

namespace eval_detail {

/// Runs f(i) for i in [0, n) on up to `workers` threads. Results must be
/// written by index so the outcome does not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace eval_detail

/// For every case and repeat: perturb the source with a seeded draw,
/// register it onto the fixed volume, and score the unaligned, affine-only
/// and full alignments.
template <typename T>
EvalReport evaluate(const FireModel<T>& model, const std::vector<EvalCase>& cases, const PerturbationSpec& spec,
                    std::size_t repeat = 20, std::uint64_t seed = 0, std::size_t workers = 1) {
  if (cases.empty()) throw std::invalid_argument("evaluate: no cases");
  if (repeat < 1) throw std::invalid_argument("evaluate: repeat must be >= 1");
  EvalReport rep;
  for (const auto& [name, m] : cases.front().fixed.labels) rep.structures.push_back(name);
  if (rep.structures.empty()) throw std::invalid_argument("evaluate: case '" + cases.front().id + "' has no masks");
  for (const auto& c : cases)
    for (const auto& s : rep.structures)
      if (!c.source.labels.count(s) || !c.fixed.labels.count(s))
        throw std::invalid_argument("evaluate: case '" + c.id + "' is missing mask '" + s + "'");

  rep.rows.resize(cases.size() * repeat);
  eval_detail::parallel_for(rep.rows.size(), workers, [&](std::size_t i) {
    const std::size_t ci = i / repeat, r = i % repeat;
    const EvalCase& c = cases[ci];
    Rng rng(Rng::derive(seed, ci, r));
    const Perturbed moving = perturb(c.source, spec, rng);
    const Shape sp = c.fixed.spatial();

    EvalRow row;
    row.case_id = c.id;
    row.repeat = r;
    auto t0 = std::chrono::steady_clock::now();
    const AffineMatrix<T> A = predict_affine_matrix(moving.volume, c.fixed, model, Direction::ab);
    const Tensor<T> aff_grid = affine_grid(A, sp);
    row.seconds_affine = eval_detail::seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    const Registration<T> fwd = register_volumes(moving.volume, c.fixed, model, Direction::ab);
    row.seconds_full = eval_detail::seconds_since(t0);
    const Registration<T> bwd = register_volumes(c.fixed, moving.volume, model, Direction::ba);

    for (const auto& s : rep.structures) {
      const Mask& mm = moving.volume.labels.at(s);
      const Mask& fm = c.fixed.labels.at(s);
      row.dice[s] = {dice(mm, fm), dice(warp_nearest(mm, aff_grid), fm), dice(fwd.warped.labels.at(s), fm)};
    }
    row.ic_residual = inverse_consistency_residual(moving.volume.image.template cast<T>(), fwd.grid, bwd.grid);
    row.jacobian_positive_fraction =
        std::min(jacobian_positive_fraction(fwd.grid), jacobian_positive_fraction(bwd.grid));
    rep.rows[i] = std::move(row);
  });
  rep.aggregate();
  return rep;
}

// ---------------------------------------------------------------------------
// Timing

enum class BenchMode { affine, nonrigid };

struct BenchRow {
  std::string dataset;
  BenchMode mode = BenchMode::nonrigid;
  MeanStd seconds;
  double sem = 0;  // standard error of the mean
};

struct BenchTable {
  std::vector<BenchRow> rows;

  std::string csv() const {
    std::ostringstream os;
    os << "dataset,mode,runs,mean_sec,std_sec,sem_sec\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.6f,%.6f,%.6f\n", r.dataset.c_str(),
                    r.mode == BenchMode::affine ? "affine" : "nonrigid", r.seconds.n, r.seconds.mean, r.seconds.std, r.sem);
      os << buf;
    }
    return os.str();
  }

  std::string text() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %-10s %6s %22s\n", "dataset", "mode", "runs", "FIRE-CPU (sec)");
    os << buf;
    for (const auto& r : rows) {
      char cell[64];
      std::snprintf(cell, sizeof cell, "%.4f (%.4f)", r.seconds.mean, r.seconds.std);
      std::snprintf(buf, sizeof buf, "%-16s %-10s %6zu %22s\n", r.dataset.c_str(),
                    r.mode == BenchMode::affine ? "affine" : "nonrigid", r.seconds.n, cell);
      os << buf;
    }
    return os.str();
  }
};

inline std::string dataset_label(const Volume& v) {
  std::string s = std::to_string(v.dim()) + "D ";
  const Shape sp = v.spatial();
  for (std::size_t a = 0; a < sp.size(); ++a) s += (a ? "x" : "") + std::to_string(sp[a]);
  return s;
}

/// Wall-clock seconds per registration, `runs` timed registrations per case
/// and mode (single-threaded), grouped by dataset kind.
template <typename T>
BenchTable bench(const FireModel<T>& model, const std::vector<EvalCase>& cases, const std::vector<BenchMode>& modes,
                 std::size_t runs = 5) {
  if (cases.empty()) throw std::invalid_argument("bench: no cases");
  if (runs < 1) throw std::invalid_argument("bench: runs must be >= 1");
  std::map<std::pair<std::string, BenchMode>, std::vector<double>> times;
  std::vector<std::pair<std::string, BenchMode>> order;
  for (BenchMode mode : modes)
    for (const auto& c : cases) {
      const auto key = std::make_pair(dataset_label(c.fixed), mode);
      if (!times.count(key)) order.push_back(key);
      for (std::size_t r = 0; r < runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        if (mode == BenchMode::affine) {
          const AffineMatrix<T> A = predict_affine_matrix(c.source, c.fixed, model);
          const Tensor<T> img = warp_linear(c.source.image.template cast<T>(), affine_grid(A, c.fixed.spatial()));
          (void)img;
        } else {
          (void)register_volumes(c.source, c.fixed, model);
        }
        times[key].push_back(eval_detail::seconds_since(t0));
      }
    }
  BenchTable t;
  for (const auto& key : order) {
    BenchRow r{key.first, key.second, mean_std(times[key]), 0};
    r.sem = r.seconds.std / std::sqrt(double(r.seconds.n));
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace fire
