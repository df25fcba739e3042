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

// Volume container and its on-disk format:
//
//   <stem>.vol.json          header {version, shape, spacing_mm, dtype, labels}
//   <stem>.vol.f32           little-endian row-major float32 payload
//   <stem>.<label>.msk.u8    one byte per voxel per label, values {0, 1}
//
// `shape` lists spatial extents; multi-channel payloads (e.g. exported
// displacement fields) add a "channels" key.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fire/tensor.hpp"

namespace fire {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Mask = Tensor<std::uint8_t>;

/// An image on a physical grid with optional binary label masks.
struct Volume {
  Tensor<float> image;                 // [C, spatial...], C = 1 for images
  std::vector<double> spacing;         // mm per spatial axis
  std::map<std::string, Mask> labels;  // each [1, spatial...]

  Shape spatial() const { return spatial_of(image.shape()); }
  std::size_t dim() const { return image.rank() - 1; }

  void validate() const {
    if (image.rank() < 2) throw ShapeError("Volume: image must be [C, spatial...], got " + to_string(image.shape()));
    if (spacing.size() != dim())
      throw ShapeError("Volume: " + std::to_string(spacing.size()) + " spacings for " + std::to_string(dim()) + " axes");
    for (double s : spacing)
      if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("Volume: spacing must be positive");
    if (!image.all_finite()) throw NumericalError("Volume: non-finite intensity");
    for (const auto& [name, m] : labels) {
      if (spatial_of(m.shape()) != spatial() || m.dim(0) != 1)
        throw ShapeError("Volume: label '" + name + "' shape " + to_string(m.shape()) + " does not match image");
      for (auto v : m.data())
        if (v > 1) throw std::invalid_argument("Volume: label '" + name + "' is not binary");
    }
  }
};

namespace volume_detail {

inline std::string stem_of(std::string p) {
  for (const char* suf : {".vol.json", ".vol.f32", ".vol"}) {
    const std::string s(suf);
    if (p.size() > s.size() && p.compare(p.size() - s.size(), s.size(), s) == 0) return p.substr(0, p.size() - s.size());
  }
  return p;
}

inline void write_file_atomic(const std::filesystem::path& path, const char* data, std::size_t n) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    os.write(data, std::streamsize(n));
    if (!os) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

inline std::vector<char> encode_f32(std::span<const float> v) {
  std::vector<char> out(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = char((u >> (8 * b)) & 0xffu);
  }
  return out;
}

inline std::vector<float> decode_f32(const std::vector<char>& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t(std::uint8_t(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

}  // namespace volume_detail

/// Writes `<stem>.vol.json`, `<stem>.vol.f32` and one mask file per label.
inline void save_volume(const Volume& v, const std::string& path) {
  namespace fs = std::filesystem;
  v.validate();
  const std::string stem = volume_detail::stem_of(path);
  const fs::path sp(stem);
  if (sp.has_parent_path()) fs::create_directories(sp.parent_path());
  const std::string base = sp.filename().string();

  nlohmann::json h;
  h["version"] = 1;
  h["shape"] = v.spatial();
  h["spacing_mm"] = v.spacing;
  h["dtype"] = "f32";
  if (v.image.dim(0) != 1) h["channels"] = v.image.dim(0);
  h["labels"] = nlohmann::json::array();
  for (const auto& [name, m] : v.labels) {
    const std::string file = base + "." + name + ".msk.u8";
    h["labels"].push_back({{"name", name}, {"file", file}});
    volume_detail::write_file_atomic(fs::path(stem + "." + name + ".msk.u8"),
                                     reinterpret_cast<const char*>(m.ptr()), m.size());
  }
  const auto payload = volume_detail::encode_f32(v.image.data());
  volume_detail::write_file_atomic(fs::path(stem + ".vol.f32"), payload.data(), payload.size());
  const std::string text = h.dump(2) + "\n";
  volume_detail::write_file_atomic(fs::path(stem + ".vol.json"), text.data(), text.size());
}

inline Volume load_volume(const std::string& path) {
  namespace fs = std::filesystem;
  const std::string stem = volume_detail::stem_of(path);
  const fs::path dir = fs::path(stem).parent_path();
  nlohmann::json h;
  try {
    const auto bytes = volume_detail::read_file(stem + ".vol.json");
    h = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("volume header '" + stem + ".vol.json' is not valid JSON: " + e.what());
  }
  if (!h.is_object() || !h.contains("version") || h["version"] != 1)
    throw IoError("volume header '" + stem + ".vol.json': unsupported or missing version");
  if (h.value("dtype", "") != "f32") throw IoError("volume header: dtype must be \"f32\"");
  Volume v;
  Shape spatial;
  try {
    spatial = h.at("shape").get<Shape>();
    v.spacing = h.at("spacing_mm").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("volume header: ") + e.what());
  }
  const std::size_t channels = h.value("channels", std::size_t{1});
  if (spatial.empty() || spatial.size() > 3 || channels < 1) throw IoError("volume header: bad shape");
  Shape full{channels};
  full.insert(full.end(), spatial.begin(), spatial.end());

  const auto payload = volume_detail::read_file(stem + ".vol.f32");
  if (payload.size() != product(full) * 4)
    throw IoError("volume payload '" + stem + ".vol.f32' has " + std::to_string(payload.size()) +
                  " bytes but header shape " + to_string(full) + " needs " + std::to_string(product(full) * 4));
  v.image = Tensor<float>(full, volume_detail::decode_f32(payload));

  Shape mshape{1};
  mshape.insert(mshape.end(), spatial.begin(), spatial.end());
  for (const auto& l : h.value("labels", nlohmann::json::array())) {
    const std::string name = l.at("name").get<std::string>();
    const auto bytes = volume_detail::read_file(dir / l.at("file").get<std::string>());
    if (bytes.size() != product(mshape))
      throw IoError("mask '" + name + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(product(mshape)));
    std::vector<std::uint8_t> m(bytes.begin(), bytes.end());
    v.labels.emplace(name, Mask(mshape, std::move(m)));
  }
  try {
    v.validate();
  } catch (const std::exception& e) {
    throw IoError(std::string("volume '") + stem + "': " + e.what());
  }
  return v;
}

/// Binary PGM (P5) preview of a 2-D single-channel volume; intensities in
/// [-1, 1] map linearly onto [0, 255].
inline void save_pgm(const Volume& v, const std::string& path) {
  if (v.dim() != 2 || v.image.dim(0) != 1) throw ShapeError("save_pgm: only 2-D single-channel volumes have previews");
  const std::size_t H = v.image.dim(1), W = v.image.dim(2);
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (std::size_t i = 0; i < H * W; ++i) {
    const double x = std::clamp(double(v.image[i]), -1.0, 1.0);
    out.push_back(char(std::uint8_t(std::lround((x + 1.0) * 127.5))));
  }
  volume_detail::write_file_atomic(path, out.data(), out.size());
}

}  // namespace fire
