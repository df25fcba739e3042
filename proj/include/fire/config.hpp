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

// Run configuration as one versioned JSON document:
//
//   { "version": 1,
//     "train":        { iters, lr_taf, lr_tnr, lr_gf, seed, checkpoint_every,
//                       validate_every, validation_fraction },
//     "model":        { dim, base_channels, resnet_blocks, delta_max, leaky_slope },
//     "perturbation": { lo, hi, include_nonrigid, nonrigid_amplitude,
//                       nonrigid_smoothness, seed, max_rotation_deg,
//                       secondary_scale, translation_jitter, translation_share } }
//
// Missing keys keep their defaults. Unknown keys are errors.

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "fire/data.hpp"
#include "fire/model.hpp"

namespace fire {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t iters = 2000;
  double lr_taf = 1e-5;
  double lr_tnr = 5e-5;
  double lr_gf = 1e-4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;  // 0 disables intermediate checkpoints
  std::size_t validate_every = 0;      // 0 disables validation
  double validation_fraction = 0.0;    // share of pairs held out
  ModelConfig model;
  PerturbationSpec perturbation;

  void validate() const {
    if (iters < 1) throw ConfigError("train.iters must be >= 1");
    // Zero rates freeze a group; negative ones are rejected.
    if (!(lr_taf >= 0 && lr_tnr >= 0 && lr_gf >= 0)) throw ConfigError("train learning rates must be >= 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("train.validation_fraction must lie in [0, 1)");
    model.validate();
    perturbation.validate();
  }
};

namespace config_detail {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("'" + where_ + "' must be a JSON object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    const std::string name = where_ + "." + key;
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw ConfigError("'" + name + "' must be a boolean");
    } else if constexpr (std::is_unsigned_v<V>) {
      if (!v.is_number_unsigned()) throw ConfigError("'" + name + "' must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw ConfigError("'" + name + "' must be a number");
    }
    out = v.get<V>();
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace config_detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"base_channels", c.base_channels},
          {"resnet_blocks", c.resnet_blocks},
          {"delta_max", c.delta_max},
          {"leaky_slope", c.leaky_slope}};
}

inline nlohmann::json to_json(const PerturbationSpec& s) {
  return {{"lo", s.lo},
          {"hi", s.hi},
          {"include_nonrigid", s.include_nonrigid},
          {"nonrigid_amplitude", s.nonrigid_amplitude},
          {"nonrigid_smoothness", s.nonrigid_smoothness},
          {"seed", s.seed},
          {"max_rotation_deg", s.max_rotation_deg},
          {"secondary_scale", s.secondary_scale},
          {"translation_jitter", s.translation_jitter},
          {"translation_share", s.translation_share}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json train = {{"iters", c.iters},
                          {"lr_taf", c.lr_taf},
                          {"lr_tnr", c.lr_tnr},
                          {"lr_gf", c.lr_gf},
                          {"seed", c.seed},
                          {"checkpoint_every", c.checkpoint_every},
                          {"validate_every", c.validate_every},
                          {"validation_fraction", c.validation_fraction}};
  return {{"version", 1}, {"train", train}, {"model", to_json(c.model)}, {"perturbation", to_json(c.perturbation)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where = "model") {
  ModelConfig c;
  config_detail::Reader r(j, where);
  r.get("dim", c.dim);
  r.get("base_channels", c.base_channels);
  r.get("resnet_blocks", c.resnet_blocks);
  r.get("delta_max", c.delta_max);
  r.get("leaky_slope", c.leaky_slope);
  r.finish();
  return c;
}

inline PerturbationSpec perturbation_from_json(const nlohmann::json& j, const std::string& where = "perturbation") {
  PerturbationSpec s;
  config_detail::Reader r(j, where);
  r.get("lo", s.lo);
  r.get("hi", s.hi);
  r.get("include_nonrigid", s.include_nonrigid);
  r.get("nonrigid_amplitude", s.nonrigid_amplitude);
  r.get("nonrigid_smoothness", s.nonrigid_smoothness);
  r.get("seed", s.seed);
  r.get("max_rotation_deg", s.max_rotation_deg);
  r.get("secondary_scale", s.secondary_scale);
  r.get("translation_jitter", s.translation_jitter);
  r.get("translation_share", s.translation_share);
  r.finish();
  return s;
}

/// Parses and validates a run configuration.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("version")) throw ConfigError("config is missing 'version'");
  if (j.at("version") != 1) throw ConfigError("unsupported config version " + j.at("version").dump());
  TrainConfig c;
  for (const auto& [k, v] : j.items())
    if (k != "version" && k != "train" && k != "model" && k != "perturbation")
      throw ConfigError("unknown config key '" + k + "'");
  if (j.contains("train")) {
    config_detail::Reader r(j.at("train"), "train");
    r.get("iters", c.iters);
    r.get("lr_taf", c.lr_taf);
    r.get("lr_tnr", c.lr_tnr);
    r.get("lr_gf", c.lr_gf);
    r.get("seed", c.seed);
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("validate_every", c.validate_every);
    r.get("validation_fraction", c.validation_fraction);
    r.finish();
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("perturbation")) c.perturbation = perturbation_from_json(j.at("perturbation"));
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::vector<char> bytes;
  try {
    bytes = volume_detail::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

/// FNV-1a over the canonical JSON of the model configuration.
inline std::uint64_t config_hash(const ModelConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace fire
