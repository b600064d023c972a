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

#include "uda/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "uda/error.hpp"

namespace uda::preprocess {

namespace {

// Half-pixel aligned source coordinate for output index `d`.
double source_coord(int d, int in, int out) {
  return (static_cast<double>(d) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
}

float lerp(float a, float b, double t) { return a + static_cast<float>(t) * (b - a); }

// Trilinear read with zero outside the grid.
float sample_zero(const Grid3<float>& g, double x, double y, double z) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int z0 = static_cast<int>(std::floor(z));
  const double fx = x - x0, fy = y - y0, fz = z - z0;
  auto v = [&](int xi, int yi, int zi) { return g.contains(xi, yi, zi) ? g.at(xi, yi, zi) : 0.0f; };
  const float c00 = lerp(v(x0, y0, z0), v(x0 + 1, y0, z0), fx);
  const float c10 = lerp(v(x0, y0 + 1, z0), v(x0 + 1, y0 + 1, z0), fx);
  const float c01 = lerp(v(x0, y0, z0 + 1), v(x0 + 1, y0, z0 + 1), fx);
  const float c11 = lerp(v(x0, y0 + 1, z0 + 1), v(x0 + 1, y0 + 1, z0 + 1), fx);
  return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
}

std::uint16_t nearest_zero(const Grid3<std::uint16_t>& g, double x, double y, double z) {
  const int xi = static_cast<int>(std::lround(x));
  const int yi = static_cast<int>(std::lround(y));
  const int zi = static_cast<int>(std::lround(z));
  return g.contains(xi, yi, zi) ? g.at(xi, yi, zi) : std::uint16_t{0};
}

template <typename T, typename Sampler>
Grid3<T> warp(const Grid3<T>& in, Sampler&& src_of, bool nearest) {
  Grid3<T> out(in.shape());
  const Shape3 s = in.shape();
  for (int z = 0; z < s.z; ++z) {
    for (int y = 0; y < s.y; ++y) {
      for (int x = 0; x < s.x; ++x) {
        const auto [sx, sy, sz] = src_of(x, y, z);
        if constexpr (std::is_same_v<T, float>) {
          (void)nearest;
          out.at(x, y, z) = sample_zero(in, sx, sy, sz);
        } else {
          out.at(x, y, z) = nearest_zero(in, sx, sy, sz);
        }
      }
    }
  }
  return out;
}

struct Src {
  double x, y, z;
};

auto rotation_map(Shape3 s, double degrees) {
  const double th = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(th), sn = std::sin(th);
  const double cx = (s.x - 1) / 2.0, cy = (s.y - 1) / 2.0;
  return [=](int x, int y, int z) {
    const double dx = x - cx, dy = y - cy;
    // inverse rotation maps output voxels back into the input
    return Src{c * dx + sn * dy + cx, -sn * dx + c * dy + cy, static_cast<double>(z)};
  };
}

auto zoom_map(Shape3 s, double factor) {
  const double cx = (s.x - 1) / 2.0, cy = (s.y - 1) / 2.0, cz = (s.z - 1) / 2.0;
  return [=](int x, int y, int z) {
    return Src{cx + (x - cx) / factor, cy + (y - cy) / factor, cz + (z - cz) / factor};
  };
}

void check_shape(Shape3 s, const char* what) {
  require(s.positive(), ErrorKind::kArgument, std::string(what) + ": shape must be positive");
}

}  // namespace

Grid3<float> resize_grid(const Grid3<float>& g, Shape3 target, Interp mode) {
  check_shape(target, "resize_volume");
  const Shape3 in = g.shape();
  if (in == target) return g;
  Grid3<float> out(target);
  for (int z = 0; z < target.z; ++z) {
    const double sz = std::clamp(source_coord(z, in.z, target.z), 0.0, in.z - 1.0);
    for (int y = 0; y < target.y; ++y) {
      const double sy = std::clamp(source_coord(y, in.y, target.y), 0.0, in.y - 1.0);
      for (int x = 0; x < target.x; ++x) {
        const double sx = std::clamp(source_coord(x, in.x, target.x), 0.0, in.x - 1.0);
        if (mode == Interp::kNearest) {
          out.at(x, y, z) = g.at(std::min(static_cast<int>(std::lround(sx)), in.x - 1),
                                 std::min(static_cast<int>(std::lround(sy)), in.y - 1),
                                 std::min(static_cast<int>(std::lround(sz)), in.z - 1));
          continue;
        }
        const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy), z0 = static_cast<int>(sz);
        const int x1 = std::min(x0 + 1, in.x - 1), y1 = std::min(y0 + 1, in.y - 1), z1 = std::min(z0 + 1, in.z - 1);
        const double fx = sx - x0, fy = sy - y0, fz = sz - z0;
        const float c00 = lerp(g.at(x0, y0, z0), g.at(x1, y0, z0), fx);
        const float c10 = lerp(g.at(x0, y1, z0), g.at(x1, y1, z0), fx);
        const float c01 = lerp(g.at(x0, y0, z1), g.at(x1, y0, z1), fx);
        const float c11 = lerp(g.at(x0, y1, z1), g.at(x1, y1, z1), fx);
        out.at(x, y, z) = lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
      }
    }
  }
  return out;
}

SegmentationMask resize_mask(const SegmentationMask& m, Shape3 target) {
  check_shape(target, "resize_mask");
  const Shape3 in = m.labels.shape();
  if (in == target) return m;
  SegmentationMask out{Grid3<std::uint16_t>(target)};
  // nearest: the input voxel whose extent contains the output voxel center
  auto idx = [](int d, int n_in, int n_out) {
    const auto v = static_cast<int>(std::floor((d + 0.5) * n_in / static_cast<double>(n_out)));
    return std::clamp(v, 0, n_in - 1);
  };
  for (int z = 0; z < target.z; ++z) {
    for (int y = 0; y < target.y; ++y) {
      for (int x = 0; x < target.x; ++x) {
        out.labels.at(x, y, z) = m.labels.at(idx(x, in.x, target.x), idx(y, in.y, target.y), idx(z, in.z, target.z));
      }
    }
  }
  return out;
}

VolumeSample resize_volume(const VolumeSample& v, Shape3 target, Interp mode) {
  check_shape(target, "resize_volume");
  VolumeSample out;
  out.sample_id = v.sample_id;
  out.domain = v.domain;
  out.label = v.label;
  out.voxels = resize_grid(v.voxels, target, mode);
  const Shape3 in = v.shape();
  out.spacing = {v.spacing.x * in.x / target.x, v.spacing.y * in.y / target.y, v.spacing.z * in.z / target.z};
  if (v.mask) out.mask = resize_mask(*v.mask, target);
  return out;
}

Index3 locate_roi(const SegmentationMask& mask, Shape3 crop) {
  check_shape(crop, "locate_roi");
  const Shape3 s = mask.labels.shape();
  Index3 lo{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), std::numeric_limits<int>::max()};
  Index3 hi{-1, -1, -1};
  for (int z = 0; z < s.z; ++z) {
    for (int y = 0; y < s.y; ++y) {
      for (int x = 0; x < s.x; ++x) {
        if (mask.labels.at(x, y, z) == 0) continue;
        lo = {std::min(lo.x, x), std::min(lo.y, y), std::min(lo.z, z)};
        hi = {std::max(hi.x, x), std::max(hi.y, y), std::max(hi.z, z)};
      }
    }
  }
  require(hi.x >= 0, ErrorKind::kLocalization, "locate_roi: mask has no foreground voxels");
  Index3 c;
  for (int a = 0; a < 3; ++a) {
    const int center = (lo[a] + hi[a] + 1) / 2;
    const int half = crop[a] / 2;
    const int min_c = half;                 // crop start >= 0
    const int max_c = s[a] - crop[a] + half;  // crop end <= size
    c[a] = min_c <= max_c ? std::clamp(center, min_c, max_c) : s[a] / 2;
  }
  return c;
}

VolumeSample crop_roi(const VolumeSample& v, Index3 center, Shape3 crop) {
  check_shape(crop, "crop_roi");
  VolumeSample out;
  out.sample_id = v.sample_id;
  out.domain = v.domain;
  out.label = v.label;
  out.spacing = v.spacing;
  out.voxels = Grid3<float>(crop, 0.0f);
  if (v.mask) out.mask = SegmentationMask{Grid3<std::uint16_t>(crop, 0)};
  const Index3 start{center.x - crop.x / 2, center.y - crop.y / 2, center.z - crop.z / 2};
  for (int z = 0; z < crop.z; ++z) {
    for (int y = 0; y < crop.y; ++y) {
      for (int x = 0; x < crop.x; ++x) {
        const int sx = start.x + x, sy = start.y + y, sz = start.z + z;
        if (!v.voxels.contains(sx, sy, sz)) continue;
        out.voxels.at(x, y, z) = v.voxels.at(sx, sy, sz);
        if (v.mask) out.mask->labels.at(x, y, z) = v.mask->labels.at(sx, sy, sz);
      }
    }
  }
  return out;
}

void zscore_normalize(VolumeSample& v) {
  auto vals = v.voxels.values();
  if (vals.empty()) return;
  double sum = 0.0;
  for (float f : vals) sum += f;
  const double mean = sum / static_cast<double>(vals.size());
  double ss = 0.0;
  for (float f : vals) ss += (f - mean) * (f - mean);
  const double sd = std::sqrt(ss / static_cast<double>(vals.size()));
  const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
  for (float& f : vals) f = static_cast<float>((f - mean) * scale);
}

void AugmentConfig::validate() const {
  require(noise_sd >= 0.0, ErrorKind::kConfig, "augment: noise_sd must be non-negative");
  require(intensity_scale_min <= intensity_scale_max && intensity_scale_min > 0.0, ErrorKind::kConfig,
          "augment: intensity scale range must be positive and ordered");
  require(rotation_deg_min <= rotation_deg_max, ErrorKind::kConfig, "augment: rotation range must be ordered");
  require(size_scale_min <= size_scale_max && size_scale_min > 0.0, ErrorKind::kConfig,
          "augment: size scale range must be positive and ordered");
  require(per_transform_probability >= 0.0 && per_transform_probability <= 1.0, ErrorKind::kConfig,
          "augment: probability must lie in [0, 1]");
}

double sample_intensity_factor(Rng& rng, const AugmentConfig& cfg) {
  return uniform(rng, cfg.intensity_scale_min, cfg.intensity_scale_max);
}

VolumeSample augment(const VolumeSample& v, const AugmentConfig& cfg, Rng& rng) {
  VolumeSample out = v;
  const double p = cfg.per_transform_probability;
  const Shape3 s = v.shape();

  if (bernoulli(rng, p)) {
    auto vals = out.voxels.values();
    for (float& f : vals) f += static_cast<float>(cfg.noise_sd * standard_normal(rng));
  }
  if (bernoulli(rng, p)) {
    const auto k = static_cast<float>(sample_intensity_factor(rng, cfg));
    for (float& f : out.voxels.values()) f *= k;
  }
  if (bernoulli(rng, p)) {
    const auto map = rotation_map(s, uniform(rng, cfg.rotation_deg_min, cfg.rotation_deg_max));
    out.voxels = warp(out.voxels, map, false);
    if (out.mask) out.mask->labels = warp(out.mask->labels, map, true);
  }
  if (bernoulli(rng, p)) {
    const auto map = zoom_map(s, uniform(rng, cfg.size_scale_min, cfg.size_scale_max));
    out.voxels = warp(out.voxels, map, false);
    if (out.mask) out.mask->labels = warp(out.mask->labels, map, true);
  }
  return out;
}

Grid3<float> augment_voxels(const Grid3<float>& v, const AugmentConfig& cfg, Rng& rng) {
  VolumeSample tmp;
  tmp.voxels = v;
  return augment(tmp, cfg, rng).voxels;
}

double dsc(const SegmentationMask& a, const SegmentationMask& b, Compartment compartment) {
  require(a.labels.shape() == b.labels.shape(), ErrorKind::kArgument, "dsc: mask shapes differ");
  const auto id = static_cast<std::uint16_t>(compartment);
  std::size_t na = 0, nb = 0, both = 0;
  const auto va = a.labels.values();
  const auto vb = b.labels.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const bool ia = va[i] == id, ib = vb[i] == id;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

VolumeSample preprocess_sample(const VolumeSample& v, const PreprocessConfig& cfg) {
  require(v.mask.has_value(), ErrorKind::kLocalization, "preprocess: sample " + v.sample_id + " has no mask");
  VolumeSample r = resize_volume(v, cfg.resize_shape, Interp::kTrilinear);
  VolumeSample c = crop_roi(r, locate_roi(*r.mask, cfg.roi_shape), cfg.roi_shape);
  if (cfg.zscore) zscore_normalize(c);
  return c;
}

}  // namespace uda::preprocess
