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

// Training loop, optimizer groups and checkpoints.
//
// Checkpoint files:
//   <stem>.ckpt.json   manifest: version, iteration, model config and its hash,
//                      parameter names/shapes/offsets, optimizer steps and
//                      moment offsets
//   <stem>.ckpt.f32    little-endian float32 payload in manifest order

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fire/adam.hpp"
#include "fire/config.hpp"
#include "fire/data.hpp"
#include "fire/loss.hpp"
#include "fire/model.hpp"
#include "fire/volume.hpp"

namespace fire {

/// One Adam state per parameter group.
template <typename T>
struct Optimizers {
  AdamState<T> affine, nonrigid, synthesis;

  static Optimizers from(const TrainConfig& c) {
    Optimizers o;
    o.affine.hyper.lr = c.lr_taf;
    o.nonrigid.hyper.lr = c.lr_tnr;
    o.synthesis.hyper.lr = c.lr_gf;
    return o;
  }

  AdamState<T>& operator[](ParamGroup g) {
    return g == ParamGroup::affine ? affine : g == ParamGroup::nonrigid ? nonrigid : synthesis;
  }
};

inline constexpr std::array<ParamGroup, 3> kGroups{ParamGroup::affine, ParamGroup::nonrigid, ParamGroup::synthesis};

inline const char* group_name(ParamGroup g) {
  return g == ParamGroup::affine ? "affine" : g == ParamGroup::nonrigid ? "nonrigid" : "synthesis";
}

/// One forward pass, one backward pass of the total loss, then one Adam step
/// per group. Returns the breakdown computed before the update.
template <typename T>
LossBreakdown train_step(FireModel<T>& model, const Tensor<T>& xa, const Tensor<T>& xb, Optimizers<T>& opt) {
  model.zero_grad();
  Tape<T> tape;
  const ForwardBundle<T> f = forward_pair(tape, model, xa, xb);
  const TotalLoss<T> L = total_loss(f);
  const std::string bad = L.breakdown.first_non_finite();
  if (!bad.empty()) throw NumericalError("loss component '" + bad + "' is non-finite");
  tape.backward(L.total);
  model.for_each_parameter([](ParamGroup, Parameter<T>& p) {
    if (!p.grad.all_finite()) throw NumericalError("gradient of parameter '" + p.name + "' is non-finite");
  });
  for (ParamGroup g : kGroups) {
    auto params = model.parameters(g);
    adam_step<T>(params, opt[g]);
  }
  return L.breakdown;
}

/// Total loss without any update.
template <typename T>
LossBreakdown evaluate_loss(const FireModel<T>& model, const Tensor<T>& xa, const Tensor<T>& xb) {
  Tape<T> tape(false);
  const ForwardBundle<T> f = forward_pair(tape, model, xa, xb);
  return total_loss(f).breakdown;
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
struct Checkpoint {
  FireModel<T> model;
  Optimizers<T> optimizers;
  std::size_t iteration = 0;
};

namespace ckpt_detail {

inline std::string stem_of(std::string p) {
  for (const char* suf : {".ckpt.json", ".ckpt.f32", ".ckpt"}) {
    const std::string s(suf);
    if (p.size() > s.size() && p.compare(p.size() - s.size(), s.size(), s) == 0) return p.substr(0, p.size() - s.size());
  }
  return p;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

template <typename T>
void append(std::vector<float>& out, const Tensor<T>& t) {
  for (auto v : t.data()) out.push_back(float(v));
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const FireModel<T>& model, const Optimizers<T>& opt, std::size_t iteration, const std::string& path) {
  using nlohmann::json;
  namespace fs = std::filesystem;
  const std::string stem = ckpt_detail::stem_of(path);
  if (fs::path(stem).has_parent_path()) fs::create_directories(fs::path(stem).parent_path());

  std::vector<float> payload;
  json h;
  h["version"] = 1;
  h["iteration"] = iteration;
  h["model"] = to_json(model.config());
  h["config_hash"] = ckpt_detail::hex64(config_hash(model.config()));
  json params = json::array();
  model.for_each_parameter([&](ParamGroup g, const Parameter<T>& p) {
    params.push_back({{"name", p.name}, {"group", group_name(g)}, {"shape", p.value.shape()}, {"offset", payload.size()}});
    ckpt_detail::append(payload, p.value);
  });
  h["parameters"] = params;
  json groups = json::array();
  auto& o = const_cast<Optimizers<T>&>(opt);
  for (ParamGroup g : kGroups) {
    const AdamState<T>& s = o[g];
    json e = {{"group", group_name(g)}, {"step", s.step}, {"lr", s.hyper.lr}, {"beta1", s.hyper.beta1},
              {"beta2", s.hyper.beta2}, {"eps", s.hyper.eps}, {"moments", !s.m.empty()}, {"offset", payload.size()}};
    for (const auto& m : s.m) ckpt_detail::append(payload, m);
    for (const auto& v : s.v) ckpt_detail::append(payload, v);
    groups.push_back(e);
  }
  h["optimizers"] = groups;
  h["payload_floats"] = payload.size();

  const auto bytes = volume_detail::encode_f32(payload);
  volume_detail::write_file_atomic(stem + ".ckpt.f32", bytes.data(), bytes.size());
  const std::string text = h.dump(2) + "\n";
  volume_detail::write_file_atomic(stem + ".ckpt.json", text.data(), text.size());
}

template <typename T>
void save_checkpoint(const FireModel<T>& model, const std::string& path) {
  save_checkpoint(model, Optimizers<T>{}, 0, path);
}

/// Loads a checkpoint into a fresh model. Nothing is returned unless every
/// parameter and moment buffer was read in full.
template <typename T = float>
Checkpoint<T> load_checkpoint(const std::string& path) {
  using nlohmann::json;
  const std::string stem = ckpt_detail::stem_of(path);
  json h;
  try {
    const auto bytes = volume_detail::read_file(stem + ".ckpt.json");
    h = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IoError("checkpoint manifest '" + stem + ".ckpt.json' is not valid JSON: " + e.what());
  }
  if (!h.is_object() || h.value("version", 0) != 1)
    throw IoError("checkpoint '" + stem + "': unsupported or missing version");
  try {
    const ModelConfig cfg = model_config_from_json(h.at("model"), "model");
    cfg.validate();
    if (h.at("config_hash").get<std::string>() != ckpt_detail::hex64(config_hash(cfg)))
      throw IoError("checkpoint '" + stem + "': config hash does not match its model configuration");

    const auto raw = volume_detail::read_file(stem + ".ckpt.f32");
    const std::size_t expected = h.at("payload_floats").get<std::size_t>();
    if (raw.size() != expected * 4)
      throw IoError("checkpoint payload '" + stem + ".ckpt.f32' has " + std::to_string(raw.size()) + " bytes, manifest needs " +
                    std::to_string(expected * 4));
    const std::vector<float> payload = volume_detail::decode_f32(raw);

    Checkpoint<T> ck{FireModel<T>(cfg, 0), Optimizers<T>{}, h.at("iteration").get<std::size_t>()};
    const json& params = h.at("parameters");
    if (params.size() != ck.model.parameters().size())
      throw IoError("checkpoint lists " + std::to_string(params.size()) + " parameters, model has " +
                    std::to_string(ck.model.parameters().size()));
    auto read = [&](std::size_t offset, const Shape& shape, const std::string& what) {
      const std::size_t n = product(shape);
      if (offset + n > payload.size()) throw IoError("checkpoint payload too short for " + what);
      std::vector<T> v(n);
      for (std::size_t k = 0; k < n; ++k) v[k] = T(payload[offset + k]);
      return Tensor<T>(shape, std::move(v));
    };
    std::size_t i = 0;
    ck.model.for_each_parameter([&](ParamGroup, Parameter<T>& p) {
      const json& e = params.at(i++);
      if (e.at("name").get<std::string>() != p.name || e.at("shape").get<Shape>() != p.value.shape())
        throw IoError("checkpoint parameter '" + e.at("name").get<std::string>() + "' " + to_string(e.at("shape").get<Shape>()) +
                      " does not match model parameter '" + p.name + "' " + to_string(p.value.shape()));
      p.value = read(e.at("offset").get<std::size_t>(), p.value.shape(), p.name);
      p.zero_grad();
    });
    for (const json& e : h.at("optimizers")) {
      const std::string name = e.at("group").get<std::string>();
      ParamGroup g = name == "affine" ? ParamGroup::affine : name == "nonrigid" ? ParamGroup::nonrigid : ParamGroup::synthesis;
      if (name != group_name(g)) throw IoError("checkpoint: unknown optimizer group '" + name + "'");
      AdamState<T>& s = ck.optimizers[g];
      s.step = e.at("step").get<std::uint64_t>();
      s.hyper = {e.at("lr").get<double>(), e.at("beta1").get<double>(), e.at("beta2").get<double>(), e.at("eps").get<double>()};
      if (!e.at("moments").get<bool>()) continue;
      std::size_t off = e.at("offset").get<std::size_t>();
      auto ps = ck.model.parameters(g);
      for (auto* p : ps) {
        s.m.push_back(read(off, p->value.shape(), std::string("moments of ") + p->name));
        off += p->value.size();
      }
      for (auto* p : ps) {
        s.v.push_back(read(off, p->value.shape(), std::string("moments of ") + p->name));
        off += p->value.size();
      }
    }
    return ck;
  } catch (const json::exception& e) {
    throw IoError("checkpoint manifest '" + stem + ".ckpt.json' is malformed: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training loop

/// An unaligned two-modality pair; A is perturbed and registered onto B.
struct TrainingPair {
  Volume a, b;
};

inline const char* kTraceHeader = "iter,total,syn_acc,syn_fea,syn_cyc,syn_align,reg_acc,reg_ic,r_syn,r_reg,r_smooth,lambda";

inline std::string trace_row(std::size_t iter, const LossBreakdown& b) {
  std::string row = std::to_string(iter);
  char buf[64];
  for (double v : b.values()) {
    std::snprintf(buf, sizeof buf, ",%.9f", v);
    row += buf;
  }
  return row;
}

struct TrainOptions {
  std::string out_dir;                 // empty: no files are written
  std::optional<std::string> resume;   // checkpoint to continue from
  std::function<void(std::size_t iter, const LossBreakdown&)> on_step;
};

struct TrainResult {
  FireModel<float> model;
  Optimizers<float> optimizers;
  std::vector<LossBreakdown> trace;  // rows produced by this call
  std::vector<std::pair<std::size_t, double>> validation;
};

/// Pair index and perturbed moving image for iteration `iter`.
inline std::pair<std::size_t, Perturbed> training_sample(const std::vector<TrainingPair>& pairs, std::size_t n_train,
                                                         const TrainConfig& cfg, std::size_t iter) {
  Rng rng(Rng::derive(cfg.seed, iter));
  const std::size_t idx = rng.index(n_train);
  return {idx, perturb(pairs[idx].a, cfg.perturbation, rng)};
}

inline std::size_t validation_count(std::size_t pairs, double fraction) {
  return std::size_t(std::floor(double(pairs) * fraction));
}

/// Trains from scratch or resumes. Pair sampling depends only on
/// (seed, iteration), so a resumed run draws the same pairs.
inline TrainResult train(const std::vector<TrainingPair>& pairs, const TrainConfig& cfg, const TrainOptions& opts = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument("train: dataset is empty");
  for (const auto& p : pairs) {
    if (p.a.image.shape() != p.b.image.shape())
      throw ShapeError("train: pair shapes differ " + to_string(p.a.image.shape()) + " vs " + to_string(p.b.image.shape()));
    if (p.a.dim() != cfg.model.dim)
      throw ShapeError("train: data is " + std::to_string(p.a.dim()) + "-D but model.dim is " + std::to_string(cfg.model.dim));
  }
  const std::size_t n_val = validation_count(pairs.size(), cfg.validation_fraction);
  const std::size_t n_train = pairs.size() - n_val;
  if (n_train == 0) throw std::invalid_argument("train: validation split leaves no training pairs");

  TrainResult res{FireModel<float>(cfg.model, cfg.seed), Optimizers<float>::from(cfg), {}, {}};
  std::size_t start = 0;
  if (opts.resume) {
    Checkpoint<float> ck = load_checkpoint<float>(*opts.resume);
    if (!(ck.model.config() == cfg.model)) throw ConfigError("resume: checkpoint model configuration differs from config");
    res.model = std::move(ck.model);
    res.optimizers = std::move(ck.optimizers);
    res.optimizers.affine.hyper.lr = cfg.lr_taf;
    res.optimizers.nonrigid.hyper.lr = cfg.lr_tnr;
    res.optimizers.synthesis.hyper.lr = cfg.lr_gf;
    start = ck.iteration;
  }

  const bool files = !opts.out_dir.empty();
  const fs::path out(opts.out_dir);
  std::ofstream trace;
  std::ofstream val;
  if (files) {
    fs::create_directories(out);
    // Keep rows before the resume point, then append.
    std::string kept = std::string(kTraceHeader) + "\n";
    if (start > 0 && fs::exists(out / "trace.csv")) {
      std::ifstream in(out / "trace.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) < start) kept += line + "\n";
      }
    }
    volume_detail::write_file_atomic(out / "trace.csv", kept.data(), kept.size());
    trace.open(out / "trace.csv", std::ios::app);
    if (!trace) throw IoError("cannot open trace '" + (out / "trace.csv").string() + "'");
    if (cfg.validate_every > 0 && n_val > 0) {
      val.open(out / "validation.csv", start > 0 ? std::ios::app : std::ios::trunc);
      if (start == 0) val << "iter,total\n";
    }
  }

  auto checkpoint = [&](std::size_t done, const std::string& name) {
    if (files) save_checkpoint(res.model, res.optimizers, done, (out / name).string());
  };

  for (std::size_t it = start; it < cfg.iters; ++it) {
    auto [idx, moving] = training_sample(pairs, n_train, cfg, it);
    const LossBreakdown b = train_step(res.model, moving.volume.image, pairs[idx].b.image, res.optimizers);
    res.trace.push_back(b);
    if (files) {
      trace << trace_row(it, b) << "\n";
      trace.flush();
      if (!trace) throw IoError("write failed for trace '" + (out / "trace.csv").string() + "'");
    }
    if (opts.on_step) opts.on_step(it, b);

    if (cfg.validate_every > 0 && n_val > 0 && (it + 1) % cfg.validate_every == 0) {
      double sum = 0;
      for (std::size_t k = 0; k < n_val; ++k) {
        const auto& p = pairs[n_train + k];
        Rng rng(Rng::derive(cfg.seed, k, 0x76616cull));
        const Perturbed mv = perturb(p.a, cfg.perturbation, rng);
        sum += evaluate_loss(res.model, mv.volume.image, p.b.image).total;
      }
      res.validation.emplace_back(it + 1, sum / double(n_val));
      if (val.is_open()) val << (it + 1) << "," << sum / double(n_val) << "\n" << std::flush;
    }
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iters) {
      char name[32];
      std::snprintf(name, sizeof name, "iter_%06zu", it + 1);
      checkpoint(it + 1, name);
    }
  }
  checkpoint(cfg.iters, "final");
  return res;
}

}  // namespace fire
