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

#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "uda/error.hpp"
#include "uda/preprocess.hpp"
#include "uda/random.hpp"

using namespace uda;
using namespace uda::preprocess;

namespace {

double f1(int i) { return std::sin(0.7 * i) + 0.1 * i; }
double g1(int i) { return 1.0 + 0.3 * i * i; }
double h1(int i) { return std::cos(0.4 * i); }

// 1D half-pixel linear resampling with edge clamping, written independently
// of the library.
std::vector<double> interp1(const std::vector<double>& in, int out_n) {
  const int n = static_cast<int>(in.size());
  std::vector<double> out(static_cast<std::size_t>(out_n));
  for (int d = 0; d < out_n; ++d) {
    double s = (d + 0.5) * n / out_n - 0.5;
    s = std::max(0.0, std::min(s, n - 1.0));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, n - 1);
    out[d] = in[i0] * (1.0 - (s - i0)) + in[i1] * (s - i0);
  }
  return out;
}

Grid3<float> separable(Shape3 s) {
  Grid3<float> g(s);
  for (int z = 0; z < s.z; ++z)
    for (int y = 0; y < s.y; ++y)
      for (int x = 0; x < s.x; ++x) g.at(x, y, z) = static_cast<float>(f1(x) * g1(y) * h1(z));
  return g;
}

std::vector<double> axis_values(int n, double (*fn)(int)) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(fn(i));
  return v;
}

VolumeSample box_sample(Shape3 s, Index3 lo, Index3 hi, std::uint16_t label = 1) {
  VolumeSample v;
  v.sample_id = "box";
  v.voxels = Grid3<float>(s, 0.0f);
  v.mask = SegmentationMask{Grid3<std::uint16_t>(s, 0)};
  for (int z = lo.z; z < hi.z; ++z)
    for (int y = lo.y; y < hi.y; ++y)
      for (int x = lo.x; x < hi.x; ++x) {
        v.mask->labels.at(x, y, z) = label;
        v.voxels.at(x, y, z) = 1.0f;
      }
  return v;
}

}  // namespace

TEST_CASE("trilinear resize matches a separable oracle") {
  const Shape3 in{7, 5, 4};
  const auto g = separable(in);
  for (const Shape3 out : {Shape3{13, 9, 6}, Shape3{3, 2, 2}, Shape3{7, 11, 1}}) {
    const auto r = resize_grid(g, out, Interp::kTrilinear);
    REQUIRE(r.shape() == out);
    const auto fx = interp1(axis_values(in.x, f1), out.x);
    const auto fy = interp1(axis_values(in.y, g1), out.y);
    const auto fz = interp1(axis_values(in.z, h1), out.z);
    for (int z = 0; z < out.z; ++z)
      for (int y = 0; y < out.y; ++y)
        for (int x = 0; x < out.x; ++x)
          CHECK(r.at(x, y, z) == doctest::Approx(fx[x] * fy[y] * fz[z]).epsilon(1e-5));
  }
}

TEST_CASE("resize identity and constants") {
  const auto g = separable({6, 6, 3});
  CHECK(resize_grid(g, {6, 6, 3}, Interp::kTrilinear) == g);
  const Grid3<float> c({5, 4, 3}, 2.5f);
  const auto rc = resize_grid(c, {9, 2, 7}, Interp::kTrilinear);
  for (float v : rc.values()) CHECK(v == doctest::Approx(2.5));
  CHECK_THROWS_AS(resize_grid(c, {0, 2, 2}, Interp::kTrilinear), Error);
}

TEST_CASE("resize_volume rescales spacing and keeps mask labels") {
  auto v = box_sample({8, 8, 4}, {2, 2, 1}, {6, 6, 3}, 3);
  for (int i = 0; i < 8; ++i) v.mask->labels.at(i & 1, (i >> 1) & 1, i >> 2) = 5;
  v.spacing = {1.0, 0.5, 2.0};
  const auto r = resize_volume(v, {16, 4, 8});
  CHECK(r.spacing.x == doctest::Approx(0.5));
  CHECK(r.spacing.y == doctest::Approx(1.0));
  CHECK(r.spacing.z == doctest::Approx(1.0));
  REQUIRE(r.mask);
  std::set<std::uint16_t> labels(r.mask->labels.values().begin(), r.mask->labels.values().end());
  CHECK(labels == std::set<std::uint16_t>{0, 3, 5});
  // doubling is exact replication for nearest masks
  const auto up = resize_mask(*v.mask, {16, 16, 8});
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(up.labels.at(x, y, z) == v.mask->labels.at(x / 2, y / 2, z / 2));
}

TEST_CASE("ROI location and crop") {
  const Shape3 s{20, 20, 10};
  SUBCASE("interior box is centered") {
    const auto v = box_sample(s, {6, 8, 3}, {12, 14, 7});
    const Index3 c = locate_roi(*v.mask, {6, 6, 4});
    CHECK(c == Index3{9, 11, 5});
    const auto crop = crop_roi(v, c, {6, 6, 4});
    CHECK(crop.shape() == Shape3{6, 6, 4});
    for (float f : crop.voxels.values()) CHECK(f == 1.0f);
    for (auto l : crop.mask->labels.values()) CHECK(l == 1);
  }
  SUBCASE("box at the border is clamped inside") {
    const auto v = box_sample(s, {0, 0, 0}, {2, 2, 2});
    const Index3 c = locate_roi(*v.mask, {8, 8, 4});
    CHECK(c == Index3{4, 4, 2});
    const auto crop = crop_roi(v, c, {8, 8, 4});
    CHECK(crop.voxels.at(0, 0, 0) == 1.0f);
    CHECK(crop.voxels.at(2, 2, 2) == 0.0f);
  }
  SUBCASE("crop larger than the volume pads with zeros") {
    const auto v = box_sample({4, 4, 2}, {0, 0, 0}, {4, 4, 2});
    const Index3 c = locate_roi(*v.mask, {8, 8, 4});
    CHECK(c == Index3{2, 2, 1});
    const auto crop = crop_roi(v, c, {8, 8, 4});
    double sum = 0;
    for (float f : crop.voxels.values()) sum += f;
    CHECK(sum == 32.0);
    CHECK(crop.voxels.at(0, 0, 0) == 0.0f);
    CHECK(crop.voxels.at(2, 2, 1) == 1.0f);
  }
  SUBCASE("empty mask") {
    SegmentationMask empty{Grid3<std::uint16_t>(s, 0)};
    try {
      locate_roi(empty, {4, 4, 4});
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kLocalization);
    }
  }
}

TEST_CASE("z-score") {
  VolumeSample v;
  v.voxels = separable({5, 4, 3});
  zscore_normalize(v);
  double m = 0, ss = 0;
  for (float f : v.voxels.values()) m += f;
  m /= 60;
  for (float f : v.voxels.values()) ss += (f - m) * (f - m);
  CHECK(std::abs(m) < 1e-6);
  CHECK(std::sqrt(ss / 60) == doctest::Approx(1.0).epsilon(1e-5));

  VolumeSample c;
  c.voxels = Grid3<float>({3, 3, 3}, 7.0f);
  zscore_normalize(c);
  for (float f : c.voxels.values()) CHECK(f == 0.0f);
}

TEST_CASE("augmentation") {
  auto v = box_sample({16, 16, 6}, {4, 5, 1}, {11, 12, 5}, 2);
  v.voxels = separable({16, 16, 6});
  AugmentConfig cfg;

  SUBCASE("seeded") {
    Rng a(42), b(42), c(43);
    const auto x = augment(v, cfg, a);
    CHECK(x.voxels == augment(v, cfg, b).voxels);
    bool differs = false;
    for (int i = 0; i < 5 && !differs; ++i) differs = !(augment(v, cfg, c).voxels == x.voxels);
    CHECK(differs);
  }
  SUBCASE("probability zero is the identity") {
    cfg.per_transform_probability = 0.0;
    Rng rng(1);
    const auto x = augment(v, cfg, rng);
    CHECK(x.voxels == v.voxels);
    CHECK(x.mask == v.mask);
  }
  SUBCASE("intensity scaling only") {
    cfg.per_transform_probability = 1.0;
    cfg.noise_sd = 0.0;
    cfg.rotation_deg_min = cfg.rotation_deg_max = 0.0;
    cfg.size_scale_min = cfg.size_scale_max = 1.0;
    Rng rng(9);
    const auto x = augment(v, cfg, rng);
    const double k = x.voxels.at(3, 3, 3) / v.voxels.at(3, 3, 3);
    CHECK(k >= 0.8);
    CHECK(k <= 1.2);
    for (std::size_t i = 0; i < v.voxels.size(); ++i)
      CHECK(x.voxels.values()[i] == doctest::Approx(k * v.voxels.values()[i]).epsilon(1e-5));
    CHECK(x.mask == v.mask);
  }
  SUBCASE("geometry moves the mask with nearest labels") {
    cfg.per_transform_probability = 1.0;
    cfg.rotation_deg_min = cfg.rotation_deg_max = 10.0;
    Rng rng(3);
    const auto x = augment(v, cfg, rng);
    REQUIRE(x.mask);
    CHECK_FALSE(x.mask == v.mask);
    for (auto l : x.mask->labels.values()) CHECK((l == 0 || l == 2));
    CHECK(dsc(*x.mask, *v.mask, Compartment::kMedialTibialCartilage) > 0.7);
  }
  SUBCASE("factor range") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
      const double k = sample_intensity_factor(rng, cfg);
      CHECK(k >= 0.8);
      CHECK(k < 1.2);
    }
  }
  SUBCASE("validation") {
    cfg.rotation_deg_min = 5;
    cfg.rotation_deg_max = -5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    AugmentConfig p;
    p.per_transform_probability = 1.5;
    CHECK_THROWS_AS(p.validate(), Error);
  }
}

TEST_CASE("dice coefficient") {
  const Shape3 s{10, 10, 1};
  const auto a = box_sample(s, {0, 0, 0}, {4, 5, 1}, 1);  // 20 voxels
  const auto b = box_sample(s, {2, 0, 0}, {6, 5, 1}, 1);  // 20 voxels, 10 shared
  CHECK(dsc(*a.mask, *b.mask, Compartment::kFemoralCartilage) == doctest::Approx(0.5));
  CHECK(dsc(*a.mask, *a.mask, Compartment::kFemoralCartilage) == 1.0);
  CHECK(dsc(*a.mask, *b.mask, Compartment::kPatellarCartilage) == 1.0);
  const auto c = box_sample(s, {6, 6, 0}, {8, 8, 1}, 1);
  CHECK(dsc(*a.mask, *c.mask, Compartment::kFemoralCartilage) == 0.0);
  // symmetric on random masks
  Rng rng(7);
  SegmentationMask r1{Grid3<std::uint16_t>(s)}, r2{Grid3<std::uint16_t>(s)};
  for (auto& l : r1.labels.values()) l = static_cast<std::uint16_t>(uniform_index(rng, 3));
  for (auto& l : r2.labels.values()) l = static_cast<std::uint16_t>(uniform_index(rng, 3));
  for (auto comp : {Compartment::kFemoralCartilage, Compartment::kMedialTibialCartilage}) {
    const double d = dsc(r1, r2, comp);
    CHECK(d == dsc(r2, r1, comp));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("preprocess pipeline") {
  auto v = box_sample({32, 32, 16}, {10, 12, 5}, {20, 22, 11});
  v.voxels = separable({32, 32, 16});
  PreprocessConfig cfg;
  cfg.resize_shape = {16, 16, 8};
  cfg.roi_shape = {8, 8, 4};
  const auto p = preprocess_sample(v, cfg);
  CHECK(p.shape() == Shape3{8, 8, 4});
  REQUIRE(p.mask);
  double m = 0;
  for (float f : p.voxels.values()) m += f;
  CHECK(std::abs(m / 256) < 1e-5);
  v.mask.reset();
  CHECK_THROWS_AS(preprocess_sample(v, cfg), Error);
}
