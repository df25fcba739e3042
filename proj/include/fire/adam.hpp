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

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fire/autodiff.hpp"

namespace fire {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one parameter group, in group order.
template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

/// One bias-corrected Adam update of `params` using their accumulated grads.
/// Moment buffers are created on the first call and must keep matching shapes.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size())
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) + " buffers for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    if (p.value.shape() != state.m[i].shape() || p.grad.shape() != p.value.shape())
      throw ShapeError("adam_step: parameter '" + p.name + "' shape " + to_string(p.value.shape()) +
                       " does not match its gradient or moment buffers");
  }

  ++state.step;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      const double mk = h.beta1 * m[k] + (1.0 - h.beta1) * g;
      const double vk = h.beta2 * v[k] + (1.0 - h.beta2) * g * g;
      m[k] = T(mk);
      v[k] = T(vk);
      const double mhat = mk / c1;
      const double vhat = vk / c2;
      p.value[k] = T(double(p.value[k]) - h.lr * mhat / (std::sqrt(vhat) + h.eps));
    }
  }
}

}  // namespace fire
