// Copyright 2026 The firereg Authors
// Licensed under the Apache License, Version 2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace fire::testing {

struct GradResult {
  std::string name;
  double error;
  double tolerance;
};

/// Reverse-mode vs central differences for every differentiable op, in
/// 64-bit, on inputs of at most 1000 elements.
inline std::vector<GradResult> op_gradient_cases() {
  using ops::Padding;
  std::vector<GradResult> out;
  auto add = [&](std::string name, const Fn& f, std::vector<Td> ins, double tol = 1e-4) {
    out.push_back({std::move(name), gradcheck(f, std::move(ins)), tol});
  };
  auto bias = [](std::size_t n, std::uint64_t s) { return random_tensor({n}, s); };

  add("conv2d same s1", [](Tape<double>&, const std::vector<Vd>& v) { return ops::conv(v[0], v[1], v[2], 1, Padding::same); },
      {random_tensor({2, 6, 5}, 1), random_tensor({3, 2, 3, 3}, 2), bias(3, 3)});
  add("conv2d same s2", [](Tape<double>&, const std::vector<Vd>& v) { return ops::conv(v[0], v[1], v[2], 2, Padding::same); },
      {random_tensor({2, 7, 6}, 4), random_tensor({2, 2, 3, 3}, 5), bias(2, 6)});
  add("conv2d valid 7x7", [](Tape<double>&, const std::vector<Vd>& v) { return ops::conv(v[0], v[1], std::nullopt, 1, Padding::valid); },
      {random_tensor({1, 9, 9}, 7), random_tensor({2, 1, 7, 7}, 8)});
  add("conv3d same s2", [](Tape<double>&, const std::vector<Vd>& v) { return ops::conv(v[0], v[1], v[2], 2, Padding::same); },
      {random_tensor({2, 4, 5, 4}, 9), random_tensor({2, 2, 3, 3, 3}, 10), bias(2, 11)});
  add("conv1d same", [](Tape<double>&, const std::vector<Vd>& v) { return ops::conv(v[0], v[1], v[2], 1, Padding::same); },
      {random_tensor({2, 9}, 12), random_tensor({3, 2, 5}, 13), bias(3, 14)});
  add("dense", [](Tape<double>&, const std::vector<Vd>& v) { return ops::dense(v[0], v[1], v[2]); },
      {random_tensor({7}, 15), random_tensor({4, 7}, 16), bias(4, 17)});
  add("tanh", [](Tape<double>&, const std::vector<Vd>& v) { return ops::tanh(v[0]); }, {random_tensor({3, 4, 4}, 18, -2, 2)});
  add("leaky_relu", [](Tape<double>&, const std::vector<Vd>& v) { return ops::leaky_relu(v[0], 0.2); },
      {random_tensor({3, 4, 4}, 19)});
  add("relu", [](Tape<double>&, const std::vector<Vd>& v) { return ops::relu(v[0]); }, {random_tensor({3, 4, 4}, 20)});
  add("instance_norm 2d", [](Tape<double>&, const std::vector<Vd>& v) { return ops::instance_norm(v[0]); },
      {random_tensor({3, 5, 4}, 21, -1, 3)});
  add("instance_norm 3d", [](Tape<double>&, const std::vector<Vd>& v) { return ops::instance_norm(v[0]); },
      {random_tensor({2, 3, 4, 3}, 22)});
  add("global_avg_pool", [](Tape<double>&, const std::vector<Vd>& v) { return ops::global_avg_pool(v[0]); },
      {random_tensor({3, 5, 6}, 23)});
  add("resize up 2d", [](Tape<double>&, const std::vector<Vd>& v) { return ops::resize_linear(v[0], Shape{9, 11}); },
      {random_tensor({2, 4, 5}, 24)});
  add("resize down 3d", [](Tape<double>&, const std::vector<Vd>& v) { return ops::resize_linear(v[0], Shape{3, 4, 2}); },
      {random_tensor({2, 5, 6, 4}, 25)});
  add("concat_channels", [](Tape<double>&, const std::vector<Vd>& v) { return ops::concat_channels(v[0], v[1]); },
      {random_tensor({2, 3, 3}, 26), random_tensor({1, 3, 3}, 27)});
  add("rms", [](Tape<double>&, const std::vector<Vd>& v) { return ops::rms(v[0], v[1]); },
      {random_tensor({2, 4, 4}, 28), random_tensor({2, 4, 4}, 29)});
  {
    auto r = std::make_shared<ResBlock<double>>();
    r->c1 = ConvLayer<double>{Parameter<double>("c1.w", random_tensor({3, 3, 3, 3}, 33)),
                              Parameter<double>("c1.b", random_tensor({3}, 34)), 1};
    r->c2 = ConvLayer<double>{Parameter<double>("c2.w", random_tensor({3, 3, 3, 3}, 35)),
                              Parameter<double>("c2.b", random_tensor({3}, 36)), 1};
    add("resnet_block input", [r](Tape<double>& t, const std::vector<Vd>& v) { return resnet_block(t, *r, v[0]); },
        {random_tensor({3, 5, 5}, 37)});
  }
  {
    ResBlock<double> r;
    r.c1 = ConvLayer<double>{Parameter<double>("c1.w", random_tensor({3, 3, 3, 3}, 52)), Parameter<double>("c1.b", bias(3, 53)), 1};
    r.c2 = ConvLayer<double>{Parameter<double>("c2.w", random_tensor({3, 3, 3, 3}, 54)), Parameter<double>("c2.b", bias(3, 55)), 1};
    const Td x = random_tensor({3, 5, 5}, 56);
    out.push_back({"resnet_block parameters",
                   param_gradcheck({&r.c1.w, &r.c1.b, &r.c2.w, &r.c2.b},
                                   [&](Tape<double>& t) { return resnet_block(t, r, t.constant(x)); }),
                   1e-4});
  }

  // Sampler: grids stay away from cell boundaries; some points leave the
  // image to cover the clamp and zeros policies.
  auto grid2 = [](std::uint64_t s) {
    Td g = random_tensor({2, 4, 5}, s, -1.3, 1.3);
    return g;
  };
  add("sample 2d clamp", [](Tape<double>&, const std::vector<Vd>& v) { return sample(v[0], v[1], Border::clamp); },
      {random_tensor({2, 5, 6}, 38), grid2(39)});
  add("sample 2d zeros", [](Tape<double>&, const std::vector<Vd>& v) { return sample(v[0], v[1], Border::zeros); },
      {random_tensor({2, 5, 6}, 40), grid2(41)});
  add("sample 3d", [](Tape<double>&, const std::vector<Vd>& v) { return sample(v[0], v[1]); },
      {random_tensor({1, 4, 5, 3}, 42), random_tensor({3, 3, 3, 2}, 43, -0.95, 0.95)});
  add("sample 1d", [](Tape<double>&, const std::vector<Vd>& v) { return sample(v[0], v[1]); },
      {random_tensor({2, 7}, 44), random_tensor({1, 9}, 45, -0.95, 0.95)});
  add("affine_apply", [](Tape<double>&, const std::vector<Vd>& v) { return affine_apply(v[0], v[1]); },
      {random_tensor({2, 3}, 46), random_tensor({2, 3, 4}, 47)});
  add("compose", [](Tape<double>&, const std::vector<Vd>& v) { return compose(v[0], v[1], Shape{7, 6}); },
      {random_tensor({2, 3}, 48), random_tensor({2, 3, 4}, 49, -0.2, 0.2)});
  add("bending_energy 2d", [](Tape<double>&, const std::vector<Vd>& v) { return bending_energy(v[0]); },
      {random_tensor({2, 5, 6}, 50)});
  add("bending_energy 3d", [](Tape<double>&, const std::vector<Vd>& v) { return bending_energy(v[0]); },
      {random_tensor({3, 4, 3, 5}, 51)});
  return out;
}

/// Tiny model with every head perturbed away from its identity
/// initialization so that all subnetworks carry gradient.
inline FireModel<double> tiny_model(std::uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.resnet_blocks = 1;
  FireModel<double> m(cfg, seed);
  Rng rng(seed + 1);
  m.for_each_parameter([&](ParamGroup, Parameter<double>& p) {
    if (p.name.ends_with("af.d2.w") || p.name.ends_with("nr.head.w") || p.name.ends_with("nr.head.b"))
      for (auto& v : p.value.data()) v = 0.05 * rng.normal();
  });
  return m;
}

inline std::pair<Td, Td> tiny_pair(std::size_t size = 36) {
  auto [a, b] = generate_phantom_pair(11, 2, size);
  Rng rng(5);
  PerturbationSpec spec;
  const Perturbed p = perturb(a, spec, rng);
  return {p.volume.image.cast<double>(), b.image.cast<double>()};
}

/// Directional finite-difference checks of one loss value: one random
/// direction per optimizer group and one over all parameters. Returns the
/// worst relative error.
template <typename Loss>
double model_directional_check(FireModel<double>& m, const Td& xa, const Td& xb, Loss&& loss, double h = 1e-7) {
  m.zero_grad();
  {
    Tape<double> t;
    auto f = forward_pair(t, m, xa, xb);
    t.backward(loss(f));
  }
  auto value = [&] {
    Tape<double> t(false);
    auto f = forward_pair(t, m, xa, xb);
    return loss(f).value()[0];
  };
  std::vector<std::vector<Parameter<double>*>> sets{m.parameters(ParamGroup::affine), m.parameters(ParamGroup::nonrigid),
                                                    m.parameters(ParamGroup::synthesis), m.parameters()};
  double worst = 0;
  std::uint64_t s = 1000;
  for (const auto& set : sets) {
    std::vector<Td> dirs, saved;
    double ga = 0;
    for (auto* p : set) {
      dirs.push_back(random_tensor(p->value.shape(), ++s));
      saved.push_back(p->value);
      for (std::size_t k = 0; k < p->value.size(); ++k) ga += p->grad[k] * dirs.back()[k];
    }
    auto shift = [&](double step) {
      for (std::size_t i = 0; i < set.size(); ++i)
        for (std::size_t k = 0; k < saved[i].size(); ++k) set[i]->value[k] = saved[i][k] + step * dirs[i][k];
    };
    shift(h);
    const double lp = value();
    shift(-h);
    const double lm = value();
    shift(0);
    const double fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-9}));
  }
  return worst;
}

inline std::vector<GradResult> loss_gradient_cases() {
  std::vector<GradResult> out;
  FireModel<double> m = tiny_model();
  const auto [xa, xb] = tiny_pair();
  using B = ForwardBundle<double>;
  auto add = [&](std::string name, auto f, double tol) {
    out.push_back({"loss " + name + " wrt parameters", model_directional_check(m, xa, xb, f), tol});
  };
  add("syn_acc", [](const B& f) { return synthesis_loss(f).acc; }, 1e-4);
  add("syn_fea", [](const B& f) { return synthesis_loss(f).fea; }, 1e-4);
  add("syn_cyc", [](const B& f) { return synthesis_loss(f).cyc; }, 1e-4);
  add("syn_align", [](const B& f) { return synthesis_loss(f).align; }, 1e-4);
  add("reg_ic", [](const B& f) { return registration_loss(f).ic; }, 1e-4);
  add("r_syn", [](const B& f) { return regularization(f).syn; }, 1e-4);
  add("r_reg", [](const B& f) { return regularization(f).reg; }, 1e-4);
  add("r_smooth", [](const B& f) { return regularization(f).smooth; }, 1e-4);
  add("total_loss", [](const B& f) { return total_loss(f).total; }, 1e-3);
  return out;
}

}  // namespace fire::testing
