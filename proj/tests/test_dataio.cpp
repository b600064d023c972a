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
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "uda/dataio.hpp"
#include "uda/error.hpp"
#include "uda/random.hpp"
#include "uda/volume_io.hpp"

using namespace uda;
using namespace uda::data;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(UDAKIT_TEST_TMP) / ("dataio_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ShiftParams small_params() {
  ShiftParams p = ShiftParams::preset("default");
  p.source.shape = p.target.shape = {24, 24, 12};
  return p;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kArgument;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump();
}

}  // namespace

TEST_CASE("positive counts") {
  CHECK(positive_count(100, 1.0 / 3.0) == 33);
  CHECK(positive_count(318, 1.0 / 3.0) == 106);
  CHECK(positive_count(50, 0.1) == 5);
  CHECK(positive_count(10, 0.3) == 3);
  CHECK(positive_count(2, 1.0 / 3.0) == 1);
  CHECK(positive_count(1, 0.5) == 0);  // tie goes to negatives
  CHECK(positive_count(3, 0.5) == 1);
  CHECK(positive_count(0, 0.4) == 0);
  for (int n = 0; n < 200; ++n) {
    const int k = positive_count(n, 0.37);
    CHECK(std::abs(k - n * 0.37) <= 0.5 + 1e-9);
  }
  CHECK(kind_of([] { positive_count(5, 1.0); }) == ErrorKind::kConfig);
}

TEST_CASE("shift parameters") {
  const auto d = ShiftParams::preset("default");
  CHECK(ShiftParams::from_json(d.to_json()).to_json() == d.to_json());
  const auto none = ShiftParams::preset("none");
  CHECK(none.target.gain == none.source.gain);
  CHECK(none.target.offset == none.source.offset);
  CHECK(ShiftParams::from_json(json{{"preset", "strong"}}).to_json() == ShiftParams::preset("strong").to_json());
  CHECK(kind_of([] { ShiftParams::preset("unknown"); }) == ErrorKind::kConfig);
  auto bad = d;
  bad.source.noise_sd_min = 2.0;
  bad.source.noise_sd_max = 1.0;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::kConfig);
}

TEST_CASE("gaussian blur") {
  Grid3<float> c({7, 5, 4}, 3.0f);
  const auto bc = gaussian_blur(c, 1.2);
  for (float v : bc.values()) CHECK(v == doctest::Approx(3.0));
  CHECK(gaussian_blur(c, 0.0) == c);
  Grid3<float> impulse({21, 21, 21}, 0.0f);
  impulse.at(10, 10, 10) = 1.0f;
  const auto bi = gaussian_blur(impulse, 1.0);
  double sum = 0;
  for (float v : bi.values()) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(bi.at(9, 10, 10) == doctest::Approx(bi.at(11, 10, 10)));
  CHECK(bi.at(10, 9, 10) == doctest::Approx(bi.at(10, 10, 11)));
  CHECK(bi.at(10, 10, 10) > bi.at(11, 10, 10));
}

TEST_CASE("phantom structure") {
  auto p = small_params();
  const auto v = synthesize_sample("a", Domain::kSource, false, p, 5);
  CHECK(v.shape() == p.source.shape);
  CHECK(v.spacing == p.source.spacing);
  REQUIRE(v.mask);
  v.validate();
  std::vector<int> counts(kNumCompartments, 0);
  for (auto l : v.mask->labels.values()) ++counts[l];
  for (std::uint16_t c = 1; c <= 5; ++c) CHECK(counts[c] > 0);

  // with noise removed, a lesion only adds intensity
  p.source.noise_sd_min = p.source.noise_sd_max = 0.0;
  auto flat = p;
  flat.lesion.contrast = 0.0;
  const auto neg = synthesize_sample("a", Domain::kSource, true, flat, 9);
  const auto pos = synthesize_sample("a", Domain::kSource, true, p, 9);
  double added = 0;
  for (std::size_t i = 0; i < pos.voxels.size(); ++i) {
    const double d = pos.voxels.values()[i] - neg.voxels.values()[i];
    CHECK(d >= -1e-3);
    added += d;
  }
  CHECK(added > 0.0);
  CHECK(pos.mask == neg.mask);
}

TEST_CASE("synthetic cohorts are seeded") {
  const auto p = small_params();
  const auto a = generate_synthetic(9, Domain::kTarget, p, 3, 1);
  const auto b = generate_synthetic(9, Domain::kTarget, p, 3, 4);
  REQUIRE(a.size() == 9);
  int positives = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].voxels == b[i].voxels);
    CHECK(a[i].label == b[i].label);
    CHECK(a[i].domain == Domain::kTarget);
    CHECK_FALSE(a[i].label.cartilage_meniscus.has_value());
    REQUIRE(a[i].label.subchondral_bone.has_value());
    positives += *a[i].label.subchondral_bone;
  }
  CHECK(positives == positive_count(9, p.prevalence));
  CHECK(a[0].sample_id == "tgt-0000");
  const auto c = generate_synthetic(9, Domain::kTarget, p, 4, 1);
  CHECK_FALSE(c[0].voxels == a[0].voxels);

  const auto d1 = scratch("same1");
  const auto d2 = scratch("same2");
  write_dataset(a, d1);
  write_dataset(b, d2);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    ++files;
    CHECK(file_bytes(e.path()) == file_bytes(d2 / e.path().filename()));
  }
  CHECK(files == 9 * 4 + 1);
}

TEST_CASE("domains are separable from intensity histograms") {
  const auto p = ShiftParams::preset("default");
  const int n = 100;
  const auto src = generate_synthetic(n, Domain::kSource, p, 8);
  const auto tgt = generate_synthetic(n, Domain::kTarget, p, 8);
  // features: mean, sd, 10th and 90th percentile
  auto features = [](const VolumeSample& v) {
    std::vector<float> x(v.voxels.values().begin(), v.voxels.values().end());
    std::sort(x.begin(), x.end());
    double m = 0, ss = 0;
    for (float f : x) m += f;
    m /= x.size();
    for (float f : x) ss += (f - m) * (f - m);
    return std::vector<double>{m, std::sqrt(ss / x.size()), x[x.size() / 10], x[x.size() * 9 / 10]};
  };
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  for (const auto& v : src) {
    xs.push_back(features(v));
    ys.push_back(0);
  }
  for (const auto& v : tgt) {
    xs.push_back(features(v));
    ys.push_back(1);
  }
  // standardize on the training half (even indices), fit logistic
  // regression by gradient descent, score the odd indices
  const std::size_t f = 4;
  std::vector<double> mu(f, 0), sd(f, 0);
  int ntr = 0;
  for (std::size_t i = 0; i < xs.size(); i += 2, ++ntr)
    for (std::size_t k = 0; k < f; ++k) mu[k] += xs[i][k];
  for (auto& m : mu) m /= ntr;
  for (std::size_t i = 0; i < xs.size(); i += 2)
    for (std::size_t k = 0; k < f; ++k) sd[k] += (xs[i][k] - mu[k]) * (xs[i][k] - mu[k]);
  for (auto& s : sd) s = std::sqrt(s / ntr) + 1e-12;
  for (auto& x : xs)
    for (std::size_t k = 0; k < f; ++k) x[k] = (x[k] - mu[k]) / sd[k];
  std::vector<double> w(f + 1, 0.0);
  for (int it = 0; it < 2000; ++it) {
    std::vector<double> g(f + 1, 0.0);
    for (std::size_t i = 0; i < xs.size(); i += 2) {
      double z = w[f];
      for (std::size_t k = 0; k < f; ++k) z += w[k] * xs[i][k];
      const double e = 1.0 / (1.0 + std::exp(-z)) - ys[i];
      for (std::size_t k = 0; k < f; ++k) g[k] += e * xs[i][k];
      g[f] += e;
    }
    for (std::size_t k = 0; k <= f; ++k) w[k] -= 0.1 * g[k] / ntr;
  }
  int correct = 0, total = 0;
  for (std::size_t i = 1; i < xs.size(); i += 2, ++total) {
    double z = w[f];
    for (std::size_t k = 0; k < f; ++k) z += w[k] * xs[i][k];
    correct += (z > 0) == (ys[i] == 1);
  }
  const double acc = static_cast<double>(correct) / total;
  MESSAGE("held-out histogram probe accuracy " << acc);
  CHECK(acc >= 0.9);
}

TEST_CASE("manifest round trip") {
  const auto dir = scratch("roundtrip");
  const auto samples = generate_synthetic(3, Domain::kSource, small_params(), 2);
  auto m = write_dataset(samples, dir, json{{"origin", "test"}});
  m.entries[0].split = "train";
  m.entries[1].labels.cartilage_meniscus = true;
  save_manifest(m, dir / "manifest.json");
  const auto back = load_manifest(dir / "manifest.json");
  CHECK(back == m);
  CHECK(back.root == dir);
  CHECK(manifest_from_json(to_json(m), dir) == m);
  REQUIRE(back.find("src-0001"));
  CHECK(back.find("nope") == nullptr);

  const auto loaded = load_samples(back);
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded[i].voxels == samples[i].voxels);
    CHECK(loaded[i].mask == samples[i].mask);
    CHECK(loaded[i].spacing == samples[i].spacing);
    CHECK(loaded[i].domain == Domain::kSource);
  }
  CHECK(loaded[1].label.cartilage_meniscus == true);
  CHECK(loaded[0].label.subchondral_bone == samples[0].label.subchondral_bone);
}

TEST_CASE("manifest errors") {
  const auto dir = scratch("errors");
  const auto samples = generate_synthetic(2, Domain::kSource, small_params(), 2);
  const auto m = write_dataset(samples, dir);
  json j = to_json(m);

  SUBCASE("missing volume file") {
    fs::remove(dir / "src-0001.f32");
    fs::remove(dir / "src-0001.json");
    try {
      load_manifest(dir / "manifest.json");
      FAIL("no error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kManifestMissingFile);
      CHECK(std::string(e.what()).find("src-0001.json") != std::string::npos);
    }
  }
  SUBCASE("duplicate id") {
    j["entries"][1]["sample_id"] = j["entries"][0]["sample_id"];
    write_json(dir / "dup.json", j);
    CHECK(kind_of([&] { load_manifest(dir / "dup.json"); }) == ErrorKind::kManifestDuplicateId);
    auto dup = m;
    dup.entries.push_back(dup.entries[0]);
    CHECK(kind_of([&] { save_manifest(dup, dir / "x.json"); }) == ErrorKind::kManifestDuplicateId);
  }
  SUBCASE("malformed") {
    for (const json& bad : {json::array(), json{{"format", "udakit-manifest"}, {"version", 1}},
                            json{{"format", "udakit-manifest"}, {"version", 1}, {"entries", 3}}}) {
      write_json(dir / "bad.json", bad);
      CHECK(kind_of([&] { load_manifest(dir / "bad.json"); }) == ErrorKind::kManifestMalformed);
    }
    j["entries"][0]["domain"] = "moon";
    write_json(dir / "bad.json", j);
    CHECK(kind_of([&] { load_manifest(dir / "bad.json"); }) == ErrorKind::kManifestMalformed);
    std::ofstream(dir / "garbage.json") << "{not json";
    CHECK(kind_of([&] { load_manifest(dir / "garbage.json"); }) == ErrorKind::kManifestMalformed);
  }
  SUBCASE("unreadable manifest") {
    CHECK(kind_of([&] { load_manifest(dir / "absent.json"); }) == ErrorKind::kIo);
  }
  SUBCASE("sidecar id mismatch") {
    j["entries"][0]["sample_id"] = "renamed";
    write_json(dir / "renamed.json", j);
    const auto r = load_manifest(dir / "renamed.json");
    CHECK_THROWS_AS(load_sample(r, r.entries[0]), Error);
  }
}
