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

#include "uda/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <thread>

#include "uda/error.hpp"
#include "uda/random.hpp"
#include "uda/volume_io.hpp"

namespace uda::data {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest

fs::path DatasetManifest::resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }

const ManifestEntry* DatasetManifest::find(const std::string& sample_id) const {
  for (const auto& e : entries) {
    if (e.sample_id == sample_id) return &e;
  }
  return nullptr;
}

namespace {

json label_json(const std::optional<bool>& v) { return v ? json(*v) : json(nullptr); }

std::optional<bool> label_from(const json& labels, const char* key) {
  if (!labels.contains(key) || labels.at(key).is_null()) return std::nullopt;
  return labels.at(key).get<bool>();
}

}  // namespace

json to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json j = {{"sample_id", e.sample_id}, {"volume", e.volume.generic_string()}, {"domain", domain_name(e.domain)}};
    if (e.mask) j["mask"] = e.mask->generic_string();
    j["labels"] = {{"cartilage_meniscus", label_json(e.labels.cartilage_meniscus)},
                   {"subchondral_bone", label_json(e.labels.subchondral_bone)}};
    if (e.split) j["split"] = *e.split;
    entries.push_back(std::move(j));
  }
  return {{"format", "udakit-manifest"}, {"version", 1}, {"metadata", m.metadata}, {"entries", entries}};
}

DatasetManifest manifest_from_json(const json& j, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    require(j.is_object(), ErrorKind::kManifestMalformed, "manifest: top level must be an object");
    if (j.contains("format")) {
      require(j.at("format") == "udakit-manifest", ErrorKind::kManifestMalformed, "manifest: unexpected format tag");
    }
    if (j.contains("metadata")) m.metadata = j.at("metadata");
    require(j.contains("entries") && j.at("entries").is_array(), ErrorKind::kManifestMalformed,
            "manifest: 'entries' must be an array");
    std::set<std::string> seen;
    std::size_t index = 0;
    for (const auto& je : j.at("entries")) {
      const std::string where = "manifest entry " + std::to_string(index++);
      require(je.is_object(), ErrorKind::kManifestMalformed, where + ": not an object");
      require(je.contains("sample_id") && je.at("sample_id").is_string(), ErrorKind::kManifestMalformed,
              where + ": missing sample_id");
      require(je.contains("volume") && je.at("volume").is_string(), ErrorKind::kManifestMalformed,
              where + ": missing volume path");
      ManifestEntry e;
      e.sample_id = je.at("sample_id").get<std::string>();
      require(!e.sample_id.empty(), ErrorKind::kManifestMalformed, where + ": empty sample_id");
      require(seen.insert(e.sample_id).second, ErrorKind::kManifestDuplicateId,
              "manifest: duplicate sample_id '" + e.sample_id + "'");
      e.volume = je.at("volume").get<std::string>();
      if (je.contains("mask") && !je.at("mask").is_null()) e.mask = fs::path(je.at("mask").get<std::string>());
      const std::string domain = je.value("domain", "source");
      require(domain == "source" || domain == "target", ErrorKind::kManifestMalformed,
              where + ": unknown domain '" + domain + "'");
      e.domain = parse_domain(domain);
      if (je.contains("labels")) {
        const json& lj = je.at("labels");
        require(lj.is_object(), ErrorKind::kManifestMalformed, where + ": labels must be an object");
        e.labels.cartilage_meniscus = label_from(lj, "cartilage_meniscus");
        e.labels.subchondral_bone = label_from(lj, "subchondral_bone");
      }
      if (je.contains("split") && !je.at("split").is_null()) e.split = je.at("split").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail(ErrorKind::kManifestMalformed, std::string("manifest: ") + ex.what());
  }
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  require(fs::exists(path), ErrorKind::kIo, "manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& ex) {
    fail(ErrorKind::kManifestMalformed, path.string() + ": " + ex.what());
  }
  DatasetManifest m = manifest_from_json(j, path.parent_path());
  for (const auto& e : m.entries) {
    const fs::path v = m.resolve(e.volume);
    require(fs::exists(v), ErrorKind::kManifestMissingFile,
            "manifest: sample '" + e.sample_id + "' references missing file " + v.string());
    if (e.mask) {
      const fs::path mk = m.resolve(*e.mask);
      require(fs::exists(mk), ErrorKind::kManifestMissingFile,
              "manifest: sample '" + e.sample_id + "' references missing file " + mk.string());
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    require(seen.insert(e.sample_id).second, ErrorKind::kManifestDuplicateId,
            "manifest: duplicate sample_id '" + e.sample_id + "'");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_text_atomic(path, to_json(m).dump(2) + "\n");
}

VolumeSample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  VolumeSample s = io::read_volume(m.resolve(e.volume));
  require(s.sample_id == e.sample_id, ErrorKind::kManifestMalformed,
          "manifest: entry '" + e.sample_id + "' points at volume of '" + s.sample_id + "'");
  s.domain = e.domain;
  s.label = e.labels;
  if (e.mask) s.mask = io::read_mask(m.resolve(*e.mask));
  s.validate();
  return s;
}

std::vector<VolumeSample> load_samples(const DatasetManifest& m) {
  std::vector<VolumeSample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_sample(m, e));
  return out;
}

DatasetManifest write_dataset(const std::vector<VolumeSample>& samples, const fs::path& dir, json metadata) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.root = dir;
  m.metadata = std::move(metadata);
  for (const auto& s : samples) {
    ManifestEntry e;
    e.sample_id = s.sample_id;
    e.volume = io::write_volume(s, dir / s.sample_id).filename();
    if (s.mask) e.mask = io::write_mask(*s.mask, s.sample_id, dir / (s.sample_id + "_mask")).filename();
    e.domain = s.domain;
    e.labels = s.label;
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// Shift parameters

namespace {

json style_json(const DomainStyle& s) {
  return {{"shape", {s.shape.x, s.shape.y, s.shape.z}},
          {"spacing", {s.spacing.x, s.spacing.y, s.spacing.z}},
          {"air", s.air},
          {"soft_tissue", s.soft_tissue},
          {"bone", s.bone},
          {"cartilage", s.cartilage},
          {"meniscus", s.meniscus},
          {"gain", s.gain},
          {"offset", s.offset},
          {"noise_sd_range", {s.noise_sd_min, s.noise_sd_max}},
          {"smoothing_sigma", s.smoothing_sigma},
          {"geometry_jitter", s.geometry_jitter},
          {"lesion_gain", s.lesion_gain},
          {"bias_field", s.bias_field}};
}

DomainStyle style_from(const json& j, DomainStyle s) {
  if (j.contains("shape")) {
    const auto v = j.at("shape").get<std::vector<int>>();
    require(v.size() == 3, ErrorKind::kConfig, "shift params: shape needs 3 entries");
    s.shape = {v[0], v[1], v[2]};
  }
  if (j.contains("spacing")) {
    const auto v = j.at("spacing").get<std::vector<double>>();
    require(v.size() == 3, ErrorKind::kConfig, "shift params: spacing needs 3 entries");
    s.spacing = {v[0], v[1], v[2]};
  }
  auto num = [&](const char* key, double& dst) {
    if (j.contains(key)) dst = j.at(key).get<double>();
  };
  num("air", s.air);
  num("soft_tissue", s.soft_tissue);
  num("bone", s.bone);
  num("cartilage", s.cartilage);
  num("meniscus", s.meniscus);
  num("gain", s.gain);
  num("offset", s.offset);
  num("smoothing_sigma", s.smoothing_sigma);
  num("geometry_jitter", s.geometry_jitter);
  num("lesion_gain", s.lesion_gain);
  num("bias_field", s.bias_field);
  if (j.contains("noise_sd_range")) {
    const auto v = j.at("noise_sd_range").get<std::vector<double>>();
    require(v.size() == 2, ErrorKind::kConfig, "shift params: noise_sd_range needs 2 entries");
    s.noise_sd_min = v[0];
    s.noise_sd_max = v[1];
  }
  return s;
}

void validate_style(const DomainStyle& s, const std::string& which) {
  require(s.shape.positive(), ErrorKind::kConfig, "shift params: " + which + " shape must be positive");
  require(s.spacing.x > 0 && s.spacing.y > 0 && s.spacing.z > 0, ErrorKind::kConfig,
          "shift params: " + which + " spacing must be positive");
  require(s.gain > 0, ErrorKind::kConfig, "shift params: " + which + " gain must be positive");
  require(s.noise_sd_min >= 0 && s.noise_sd_max >= s.noise_sd_min, ErrorKind::kConfig,
          "shift params: " + which + " noise range invalid");
  require(s.smoothing_sigma >= 0, ErrorKind::kConfig, "shift params: " + which + " smoothing must be >= 0");
  require(s.geometry_jitter >= 0 && s.geometry_jitter < 0.2, ErrorKind::kConfig,
          "shift params: " + which + " geometry jitter must lie in [0, 0.2)");
  require(s.bias_field >= 0 && s.bias_field <= 3, ErrorKind::kConfig,
          "shift params: " + which + " bias_field must lie in [0, 3]");
}

}  // namespace

void ShiftParams::validate() const {
  validate_style(source, "source");
  validate_style(target, "target");
  require(prevalence > 0.0 && prevalence < 1.0, ErrorKind::kConfig, "shift params: prevalence must lie in (0, 1)");
  require(lesion.radius_min > 0 && lesion.radius_max >= lesion.radius_min, ErrorKind::kConfig,
          "shift params: lesion radii must be positive and ordered");
  require(lesion.depth_min >= 0 && lesion.depth_max >= lesion.depth_min, ErrorKind::kConfig,
          "shift params: lesion depth range invalid");
}

json ShiftParams::to_json() const {
  return {{"source", style_json(source)},
          {"target", style_json(target)},
          {"lesion",
           {{"radius_range", {lesion.radius_min, lesion.radius_max}},
            {"contrast", lesion.contrast},
            {"depth_range", {lesion.depth_min, lesion.depth_max}}}},
          {"prevalence", prevalence}};
}

ShiftParams ShiftParams::from_json(const json& j) {
  try {
    ShiftParams p = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : preset("default");
    if (j.contains("source")) p.source = style_from(j.at("source"), p.source);
    if (j.contains("target")) p.target = style_from(j.at("target"), p.target);
    if (j.contains("lesion")) {
      const json& l = j.at("lesion");
      if (l.contains("radius_range")) {
        const auto v = l.at("radius_range").get<std::vector<double>>();
        require(v.size() == 2, ErrorKind::kConfig, "shift params: radius_range needs 2 entries");
        p.lesion.radius_min = v[0];
        p.lesion.radius_max = v[1];
      }
      if (l.contains("depth_range")) {
        const auto v = l.at("depth_range").get<std::vector<double>>();
        require(v.size() == 2, ErrorKind::kConfig, "shift params: depth_range needs 2 entries");
        p.lesion.depth_min = v[0];
        p.lesion.depth_max = v[1];
      }
      if (l.contains("contrast")) p.lesion.contrast = l.at("contrast").get<double>();
    }
    if (j.contains("prevalence")) p.prevalence = j.at("prevalence").get<double>();
    p.validate();
    return p;
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("shift params: ") + e.what());
  }
}

ShiftParams ShiftParams::preset(const std::string& name) {
  ShiftParams p;
  p.source.gain = 100.0;
  DomainStyle& t = p.target;
  t.spacing = {1.15, 1.15, 2.3};
  t.gain = 180.0;
  t.offset = 40.0;
  t.noise_sd_min = 0.3;
  t.noise_sd_max = 0.9;
  if (name == "default") return p;
  if (name == "none") {
    p.target = p.source;
    return p;
  }
  if (name == "strong") {
    t.noise_sd_min = 0.2;
    t.noise_sd_max = 0.7;
    t.cartilage = 0.35;
    return p;
  }
  fail(ErrorKind::kConfig, "unknown shift preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Generation

int positive_count(int n, double prevalence) {
  require(n >= 0, ErrorKind::kArgument, "positive_count: n must be non-negative");
  require(prevalence > 0.0 && prevalence < 1.0, ErrorKind::kConfig, "positive_count: prevalence must lie in (0, 1)");
  // Quotas rounded to 1e-9 so that e.g. 0.3 * 10 counts as exactly 3.
  const double a = std::round(static_cast<double>(n) * prevalence * 1e9) / 1e9;
  const auto base = static_cast<int>(std::floor(a));
  const double rem = a - base;
  const double rem_neg = std::round((1.0 - rem) * 1e9) / 1e9;
  if (rem == 0.0) return base;
  return rem > rem_neg ? base + 1 : base;
}

Grid3<float> gaussian_blur(const Grid3<float>& g, double sigma) {
  if (sigma <= 0.0) return g;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;

  const Shape3 s = g.shape();
  Grid3<float> cur = g;
  Grid3<float> next(s);
  for (int axis = 0; axis < 3; ++axis) {
    const int n = s[axis];
    for (int z = 0; z < s.z; ++z) {
      for (int y = 0; y < s.y; ++y) {
        for (int x = 0; x < s.x; ++x) {
          Index3 p{x, y, z};
          const int c = p[axis];
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            p[axis] = std::clamp(c + i, 0, n - 1);
            acc += k[i + radius] * cur.at(p.x, p.y, p.z);
          }
          next.at(x, y, z) = static_cast<float>(acc);
        }
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

namespace {

struct Ellipsoid {
  double cx, cy, cz, rx, ry, rz;

  double level(double u, double v, double w) const {
    const double a = (u - cx) / rx, b = (v - cy) / ry, c = (w - cz) / rz;
    return a * a + b * b + c * c;
  }
  Ellipsoid grown(double t) const { return {cx, cy, cz, rx + t, ry + t, rz + t}; }
};

enum Tissue : std::uint8_t { kAir, kSoft, kBone, kCartilage, kMeniscus };

double smooth_ball(double d, double r) { return 1.0 / (1.0 + std::exp((d - r) / 0.012)); }

}  // namespace

VolumeSample synthesize_sample(const std::string& sample_id, Domain domain, bool positive, const ShiftParams& params,
                               std::uint64_t sample_seed) {
  const DomainStyle& st = params.style(domain);
  Rng rng(sample_seed);
  const double j = st.geometry_jitter;
  const double y0 = uniform(rng, -j, j);
  const double x0 = uniform(rng, -j, j);
  const double sc = 1.0 + uniform(rng, -j, j);
  const double cart = 0.07 * sc;

  const Ellipsoid femur{x0, y0 + 0.6 * sc, 0.0, 0.78 * sc, 0.5 * sc, 0.72 * sc};
  const Ellipsoid tibia{x0, y0 - 0.58 * sc, 0.0, 0.78 * sc, 0.46 * sc, 0.72 * sc};
  const Ellipsoid med_men{x0 - 0.58 * sc, y0, 0.0, 0.17 * sc, 0.05 * sc, 0.5 * sc};
  const Ellipsoid lat_men{x0 + 0.58 * sc, y0, 0.0, 0.17 * sc, 0.05 * sc, 0.5 * sc};
  const Ellipsoid pat_cart{x0, y0 + 0.45 * sc, 0.83, 0.28 * sc, 0.18 * sc, 0.045};
  const Ellipsoid patella{x0, y0 + 0.45 * sc, 0.93, 0.28 * sc, 0.18 * sc, 0.055};

  // Lesion in the subchondral bone of a random condyle or plateau.
  bool has_lesion = positive;
  double lx = 0, ly = 0, lz = 0, lr = 0;
  if (has_lesion) {
    const bool in_femur = bernoulli(rng, 0.5);
    const Ellipsoid& b = in_femur ? femur : tibia;
    lx = x0 + uniform(rng, -0.55, 0.55) * sc;
    lz = uniform(rng, -0.4, 0.4) * sc;
    const double a = (lx - b.cx) / b.rx, c = lz / b.rz;
    const double half = b.ry * std::sqrt(std::max(0.0, 1.0 - a * a - c * c));
    const double depth = uniform(rng, params.lesion.depth_min, params.lesion.depth_max);
    ly = in_femur ? b.cy - half + depth : b.cy + half - depth;
    lr = uniform(rng, params.lesion.radius_min, params.lesion.radius_max);
  }
  const double noise_sd = uniform(rng, st.noise_sd_min, st.noise_sd_max);
  // Linear multiplicative bias along a random direction.
  double bias_dir[3] = {0.0, 0.0, 0.0};
  if (st.bias_field > 0.0) {
    double norm = 0.0;
    for (double& d : bias_dir) {
      d = standard_normal(rng);
      norm += d * d;
    }
    norm = std::sqrt(norm);
    for (double& d : bias_dir) d *= st.bias_field / norm;
  }

  const Shape3 s = st.shape;
  Grid3<float> img(s);
  Grid3<std::uint16_t> mask(s);
  for (int z = 0; z < s.z; ++z) {
    const double w = (z + 0.5) / s.z * 2.0 - 1.0;
    for (int y = 0; y < s.y; ++y) {
      const double v = (y + 0.5) / s.y * 2.0 - 1.0;
      for (int x = 0; x < s.x; ++x) {
        const double u = (x + 0.5) / s.x * 2.0 - 1.0;
        Tissue t = kAir;
        Compartment c = Compartment::kBackground;
        const double du = (u - x0) / 0.95, dw = w / 0.98;
        if (du * du + dw * dw < 1.0) t = kSoft;
        if (femur.level(u, v, w) < 1.0 || tibia.level(u, v, w) < 1.0 || patella.level(u, v, w) < 1.0) {
          t = kBone;
        } else if (v < femur.cy && femur.grown(cart).level(u, v, w) < 1.0) {
          t = kCartilage;
          c = Compartment::kFemoralCartilage;
        } else if (v > tibia.cy && tibia.grown(cart).level(u, v, w) < 1.0) {
          t = kCartilage;
          c = u < x0 ? Compartment::kMedialTibialCartilage : Compartment::kLateralTibialCartilage;
        } else if (med_men.level(u, v, w) < 1.0) {
          t = kMeniscus;
          c = Compartment::kMedialMeniscus;
        } else if (lat_men.level(u, v, w) < 1.0) {
          t = kMeniscus;
          c = Compartment::kLateralMeniscus;
        } else if (pat_cart.level(u, v, w) < 1.0) {
          t = kCartilage;
          c = Compartment::kPatellarCartilage;
        }
        double val = 0.0;
        switch (t) {
          case kAir: val = st.air; break;
          case kSoft: val = st.soft_tissue; break;
          case kBone: val = st.bone; break;
          case kCartilage: val = st.cartilage; break;
          case kMeniscus: val = st.meniscus; break;
        }
        if (has_lesion && t == kBone) {
          const double d = std::sqrt((u - lx) * (u - lx) + (v - ly) * (v - ly) + (w - lz) * (w - lz));
          val += st.lesion_gain * params.lesion.contrast * smooth_ball(d, lr);
        }
        img.at(x, y, z) = static_cast<float>(val);
        mask.at(x, y, z) = static_cast<std::uint16_t>(c);
      }
    }
  }
  img = gaussian_blur(img, st.smoothing_sigma);
  if (st.bias_field > 0.0) {
    for (int z = 0; z < s.z; ++z) {
      const double w = (z + 0.5) / s.z * 2.0 - 1.0;
      for (int y = 0; y < s.y; ++y) {
        const double v = (y + 0.5) / s.y * 2.0 - 1.0;
        for (int x = 0; x < s.x; ++x) {
          const double u = (x + 0.5) / s.x * 2.0 - 1.0;
          img.at(x, y, z) *= static_cast<float>(std::exp(bias_dir[0] * u + bias_dir[1] * v + bias_dir[2] * w));
        }
      }
    }
  }
  for (float& v : img.values()) {
    const double noisy = v + noise_sd * standard_normal(rng);
    v = static_cast<float>(st.gain * noisy + st.offset);
  }

  VolumeSample out;
  out.sample_id = sample_id;
  out.voxels = std::move(img);
  out.spacing = st.spacing;
  out.domain = domain;
  out.mask = SegmentationMask{std::move(mask)};
  out.label.subchondral_bone = positive;
  return out;
}

std::vector<VolumeSample> generate_synthetic(int n, Domain domain, const ShiftParams& params, std::uint64_t seed,
                                             int threads) {
  require(n >= 1, ErrorKind::kArgument, "generate_synthetic: n must be >= 1");
  params.validate();
  const std::string dname(domain_name(domain));
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "positives-" + dname));
  shuffle(order, rng);
  std::vector<bool> positive(order.size(), false);
  const int k = positive_count(n, params.prevalence);
  for (int i = 0; i < k; ++i) positive[order[static_cast<std::size_t>(i)]] = true;

  const std::string prefix = domain == Domain::kSource ? "src" : "tgt";
  std::vector<VolumeSample> out(order.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < out.size(); i += step) {
      char id[32];
      std::snprintf(id, sizeof id, "%s-%04zu", prefix.c_str(), i);
      out[i] = synthesize_sample(id, domain, positive[i], params, derive_seed(seed, "sample-" + dname, i));
    }
  };
  std::size_t nt = threads > 0 ? static_cast<std::size_t>(threads)
                               : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  nt = std::min(nt, out.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nt; ++t) pool.emplace_back(work, t, nt);
  work(0, nt);
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace uda::data
