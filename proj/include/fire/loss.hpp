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

// Training objective. All terms are RMS distances except the bending
// energy, which is the only weighted term (weight lambda).
//
//   synthesis:      acc   RMS(F_ab(g_a o phi_ab), x_b) + RMS(F_ba(g_b o phi_ba), x_a)
//                   fea   RMS(g_a, g_b o phi_ba) + RMS(g_b, g_a o phi_ab)
//                   cyc   RMS(F_ba(G(xhat_b)), x_a) + RMS(F_ab(G(xhat_a)), x_b)
//                   align RMS(g_a, G(xhat_b)) + RMS(g_b, G(xhat_a))
//   registration:   acc   same expression as synthesis acc
//                   ic    RMS(x_a, x_a o phi_ab o phi_ba) + RMS(x_b, x_b o phi_ba o phi_ab)
//   regularization: syn   RMS(x_b, F_ab(g_a o af_ab)) + RMS(x_a, F_ba(g_b o af_ba))
//                   reg   RMS(x_b, F_ab(G(x_a o af_ab))) + RMS(x_a, F_ba(G(x_b o af_ba)))
//                   smooth bending(u_ab) + bending(u_ba)

#include <array>
#include <cmath>
#include <string>

#include "fire/model.hpp"
#include "fire/ops.hpp"
#include "fire/warp.hpp"

namespace fire {

struct LossBreakdown {
  double syn_acc = 0, syn_fea = 0, syn_cyc = 0, syn_align = 0;
  double reg_acc = 0, reg_ic = 0;
  double r_syn = 0, r_reg = 0, r_smooth = 0;
  double lambda = 0;
  double total = 0;

  static constexpr std::array<const char*, 11> names{"total", "syn_acc", "syn_fea", "syn_cyc", "syn_align", "reg_acc",
                                                     "reg_ic", "r_syn", "r_reg", "r_smooth", "lambda"};

  std::array<double, 11> values() const {
    return {total, syn_acc, syn_fea, syn_cyc, syn_align, reg_acc, reg_ic, r_syn, r_reg, r_smooth, lambda};
  }

  /// Unit weights on every term except the bending energy.
  double combined() const {
    return syn_acc + syn_fea + syn_cyc + syn_align + reg_acc + reg_ic + r_syn + r_reg + lambda * r_smooth;
  }

  /// Name of the first non-finite component, or empty.
  std::string first_non_finite() const {
    const auto v = values();
    for (std::size_t i = 1; i < v.size(); ++i)
      if (!std::isfinite(v[i])) return names[i];
    return std::isfinite(total) ? "" : "total";
  }
};

/// Smoothness weight 2^(2n) / (10 N) for an n-D image of N points.
inline double lambda_for(std::size_t n, std::size_t N) {
  return std::pow(2.0, 2.0 * double(n)) / (10.0 * double(N));
}

namespace loss_detail {

/// Evaluates one named term, tagging numerical failures with its name.
template <typename F>
auto term(const char* name, F&& f) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("loss component '") + name + "': " + e.what());
  }
}

}  // namespace loss_detail

template <typename T>
struct SynthesisTerms {
  Var<T> acc, fea, cyc, align;
  Var<T> total;
};

template <typename T>
SynthesisTerms<T> synthesis_loss(const ForwardBundle<T>& f) {
  using loss_detail::term;
  using ops::add;
  using ops::rms;
  SynthesisTerms<T> s;
  s.acc = term("syn_acc", [&] { return add(rms(f.xhat_t_b, f.x_b), rms(f.xhat_t_a, f.x_a)); });
  s.fea = term("syn_fea", [&] { return add(rms(f.g_a, f.g_b_warped), rms(f.g_b, f.g_a_warped)); });
  s.cyc = term("syn_cyc", [&] { return add(rms(f.cycle_a, f.x_a), rms(f.cycle_b, f.x_b)); });
  s.align = term("syn_align", [&] { return add(rms(f.g_a, f.g_xhat_b), rms(f.g_b, f.g_xhat_a)); });
  s.total = add(add(s.acc, s.fea), add(s.cyc, s.align));
  return s;
}

template <typename T>
struct RegistrationTerms {
  Var<T> acc, ic;
  Var<T> total;
};

template <typename T>
RegistrationTerms<T> registration_loss(const ForwardBundle<T>& f) {
  using loss_detail::term;
  using ops::add;
  using ops::rms;
  RegistrationTerms<T> r;
  r.acc = term("reg_acc", [&] { return add(rms(f.xhat_t_b, f.x_b), rms(f.xhat_t_a, f.x_a)); });
  r.ic = term("reg_ic", [&] {
    // Sequential image-resolution warps: (x o phi_ab) o phi_ba.
    Var<T> a_round = sample(f.x_a_warped, f.grid_ba);
    Var<T> b_round = sample(f.x_b_warped, f.grid_ab);
    return add(rms(f.x_a, a_round), rms(f.x_b, b_round));
  });
  r.total = add(r.acc, r.ic);
  return r;
}

template <typename T>
struct RegularizationTerms {
  Var<T> syn, reg, smooth;
  double lambda = 0;
  Var<T> total;
};

template <typename T>
RegularizationTerms<T> regularization(const ForwardBundle<T>& f) {
  using loss_detail::term;
  using ops::add;
  using ops::rms;
  RegularizationTerms<T> r;
  const Shape img_sp = spatial_of(f.x_a.shape());
  r.lambda = lambda_for(img_sp.size(), product(img_sp));
  r.syn = term("r_syn", [&] { return add(rms(f.x_b, f.syn_affine_b), rms(f.x_a, f.syn_affine_a)); });
  r.reg = term("r_reg", [&] { return add(rms(f.x_b, f.reg_affine_b), rms(f.x_a, f.reg_affine_a)); });
  r.smooth = term("r_smooth", [&] { return add(bending_energy(f.field_ab), bending_energy(f.field_ba)); });
  r.total = add(add(r.syn, r.reg), ops::scale(r.smooth, T(r.lambda)));
  return r;
}

/// The scalar objective on the tape plus its numeric breakdown.
template <typename T>
struct TotalLoss {
  Var<T> total;
  LossBreakdown breakdown;
};

template <typename T>
TotalLoss<T> total_loss(const ForwardBundle<T>& f) {
  const auto s = synthesis_loss(f);
  const auto g = registration_loss(f);
  const auto r = regularization(f);
  TotalLoss<T> out;
  out.total = loss_detail::term("total", [&] { return ops::add(ops::add(s.total, g.total), r.total); });
  auto& b = out.breakdown;
  auto val = [](Var<T> v) { return double(v.value()[0]); };
  b.syn_acc = val(s.acc);
  b.syn_fea = val(s.fea);
  b.syn_cyc = val(s.cyc);
  b.syn_align = val(s.align);
  b.reg_acc = val(g.acc);
  b.reg_ic = val(g.ic);
  b.r_syn = val(r.syn);
  b.r_reg = val(r.reg);
  b.r_smooth = val(r.smooth);
  b.lambda = r.lambda;
  b.total = val(out.total);
  return out;
}

}  // namespace fire
