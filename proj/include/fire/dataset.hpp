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

// Phantom datasets on disk: a directory of volume pairs plus manifest.json
//
//   { "version": 1, "dim": 2, "size": 64, "seed": 7,
//     "pairs": [ { "id": "pair_0000", "seed": 123, "a": "pair_0000_a.vol.json",
//                  "b": "pair_0000_b.vol.json" }, ... ] }
//
// Each pair regenerates from its own seed alone.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fire/data.hpp"
#include "fire/eval.hpp"
#include "fire/trainer.hpp"
#include "fire/volume.hpp"

namespace fire {

struct DatasetEntry {
  std::string id;
  std::uint64_t seed = 0;
  Volume a, b;
};

inline std::uint64_t pair_seed(std::uint64_t seed, std::size_t index) { return Rng::derive(seed, index, 0x70616972ull); }

inline std::vector<DatasetEntry> generate_dataset(std::size_t count, std::size_t dim, std::size_t size, std::uint64_t seed) {
  std::vector<DatasetEntry> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "pair_%04zu", i);
    const std::uint64_t s = pair_seed(seed, i);
    auto [a, b] = generate_phantom_pair(s, dim, size);
    out.push_back({id, s, std::move(a), std::move(b)});
  }
  return out;
}

inline void save_dataset(const std::vector<DatasetEntry>& entries, const std::string& dir, std::size_t dim, std::size_t size,
                         std::uint64_t seed) {
  namespace fs = std::filesystem;
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create dataset directory '" + dir + "': " + e.what());
  }
  nlohmann::json m{{"version", 1}, {"dim", dim}, {"size", size}, {"seed", seed}, {"pairs", nlohmann::json::array()}};
  for (const auto& e : entries) {
    save_volume(e.a, (fs::path(dir) / (e.id + "_a")).string());
    save_volume(e.b, (fs::path(dir) / (e.id + "_b")).string());
    m["pairs"].push_back({{"id", e.id}, {"seed", e.seed}, {"a", e.id + "_a.vol.json"}, {"b", e.id + "_b.vol.json"}});
  }
  const std::string text = m.dump(2) + "\n";
  volume_detail::write_file_atomic(fs::path(dir) / "manifest.json", text.data(), text.size());
}

inline std::vector<DatasetEntry> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mp = fs::path(dir) / "manifest.json";
  nlohmann::json m;
  try {
    const auto bytes = volume_detail::read_file(mp);
    m = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset manifest '" + mp.string() + "' is not valid JSON: " + e.what());
  }
  if (!m.is_object() || m.value("version", 0) != 1) throw IoError("dataset manifest '" + mp.string() + "': unsupported version");
  std::vector<DatasetEntry> out;
  try {
    for (const auto& p : m.at("pairs")) {
      DatasetEntry e;
      e.id = p.at("id").get<std::string>();
      e.seed = p.at("seed").get<std::uint64_t>();
      e.a = load_volume((fs::path(dir) / p.at("a").get<std::string>()).string());
      e.b = load_volume((fs::path(dir) / p.at("b").get<std::string>()).string());
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset manifest '" + mp.string() + "' is malformed: " + e.what());
  }
  if (out.empty()) throw IoError("dataset '" + dir + "' lists no pairs");
  return out;
}

inline std::vector<TrainingPair> training_pairs(const std::vector<DatasetEntry>& d) {
  std::vector<TrainingPair> out;
  for (const auto& e : d) out.push_back({e.a, e.b});
  return out;
}

inline std::vector<EvalCase> eval_cases(const std::vector<DatasetEntry>& d) {
  std::vector<EvalCase> out;
  for (const auto& e : d) out.push_back({e.id, e.a, e.b});
  return out;
}

}  // namespace fire
