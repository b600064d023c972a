/*
 * Copyright 2026 The udakit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "uda/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "uda/error.hpp"

namespace uda::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void write_le_blob(const fs::path& path, std::span<const T> values) {
  std::vector<unsigned char> bytes(values.size() * sizeof(T));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) {
      std::reverse(bytes.begin() + static_cast<std::ptrdiff_t>(i),
                   bytes.begin() + static_cast<std::ptrdiff_t>(i + sizeof(T)));
    }
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::kIo, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <typename T>
std::vector<T> read_le_blob(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected * sizeof(T)) {
    fail(ErrorKind::kIo, path.string() + ": expected " + std::to_string(expected * sizeof(T)) +
                             " bytes, found " + std::to_string(bytes.size()));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) {
      std::reverse(bytes.begin() + static_cast<std::ptrdiff_t>(i),
                   bytes.begin() + static_cast<std::ptrdiff_t>(i + sizeof(T)));
    }
  }
  std::vector<T> out(expected);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ": malformed JSON: " + e.what());
  }
}

Shape3 shape_from(const json& j) {
  const auto v = j.at("shape").get<std::vector<int>>();
  require(v.size() == 3, ErrorKind::kIo, "sidecar shape must have 3 entries");
  Shape3 s{v[0], v[1], v[2]};
  require(s.positive(), ErrorKind::kIo, "sidecar shape must be positive");
  return s;
}

fs::path blob_path(const fs::path& sidecar, const json& j) {
  return sidecar.parent_path() / j.at("data_file").get<std::string>();
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + tmp.string());
    out << text;
    require(static_cast<bool>(out), ErrorKind::kIo, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_f32_blob(const fs::path& path, std::span<const float> values) { write_le_blob<float>(path, values); }

std::vector<float> read_f32_blob(const fs::path& path, std::size_t expected_count) {
  return read_le_blob<float>(path, expected_count);
}

fs::path write_volume(const VolumeSample& sample, const fs::path& stem) {
  sample.validate();
  const fs::path data = stem.string() + ".f32";
  const fs::path sidecar = stem.string() + ".json";
  write_le_blob<float>(data, sample.voxels.values());
  const Shape3& s = sample.shape();
  json j = {
      {"format", "udakit-volume"},
      {"version", 1},
      {"dtype", "float32"},
      {"byte_order", "little"},
      {"layout", "x-fastest"},
      {"shape", {s.x, s.y, s.z}},
      {"spacing", {sample.spacing.x, sample.spacing.y, sample.spacing.z}},
      {"domain", domain_name(sample.domain)},
      {"sample_id", sample.sample_id},
      {"data_file", data.filename().string()},
  };
  write_text_atomic(sidecar, j.dump(2) + "\n");
  return sidecar;
}

fs::path write_mask(const SegmentationMask& mask, const std::string& sample_id, const fs::path& stem) {
  mask.validate();
  const fs::path data = stem.string() + ".u16";
  const fs::path sidecar = stem.string() + ".json";
  write_le_blob<std::uint16_t>(data, mask.labels.values());
  const Shape3& s = mask.labels.shape();
  json j = {
      {"format", "udakit-mask"},
      {"version", 1},
      {"dtype", "uint16"},
      {"byte_order", "little"},
      {"layout", "x-fastest"},
      {"shape", {s.x, s.y, s.z}},
      {"sample_id", sample_id},
      {"data_file", data.filename().string()},
  };
  write_text_atomic(sidecar, j.dump(2) + "\n");
  return sidecar;
}

VolumeSample read_volume(const fs::path& sidecar) {
  const json j = read_json(sidecar);
  try {
    require(j.at("dtype") == "float32", ErrorKind::kIo, sidecar.string() + ": volume dtype must be float32");
    VolumeSample s;
    const Shape3 shape = shape_from(j);
    s.voxels = Grid3<float>(shape, read_le_blob<float>(blob_path(sidecar, j), shape.count()));
    const auto sp = j.at("spacing").get<std::vector<double>>();
    require(sp.size() == 3, ErrorKind::kIo, sidecar.string() + ": spacing must have 3 entries");
    s.spacing = {sp[0], sp[1], sp[2]};
    s.domain = parse_domain(j.at("domain").get<std::string>());
    s.sample_id = j.at("sample_id").get<std::string>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, sidecar.string() + ": " + e.what());
  }
}

SegmentationMask read_mask(const fs::path& sidecar) {
  const json j = read_json(sidecar);
  try {
    require(j.at("dtype") == "uint16", ErrorKind::kIo, sidecar.string() + ": mask dtype must be uint16");
    const Shape3 shape = shape_from(j);
    SegmentationMask m{Grid3<std::uint16_t>(shape, read_le_blob<std::uint16_t>(blob_path(sidecar, j), shape.count()))};
    m.validate();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, sidecar.string() + ": " + e.what());
  }
}

}  // namespace uda::io
