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

#include <cmath>

#include "doctest.h"
#include "uda/error.hpp"
#include "uda/optim.hpp"
#include "uda/random.hpp"
#include "uda/training.hpp"

using namespace uda;
using namespace uda::train;

namespace {

nn::EncoderConfig tiny_encoder() {
  nn::EncoderConfig c;
  c.input_shape = {12, 12, 6};
  c.block_layers = {2, 1};
  c.growth_rate = 4;
  c.initial_channels = 4;
  return c;
}

// Noise volumes; positives carry a bright cube near the center.
std::vector<LabeledVolume> toy_set(int n, std::uint64_t seed, const std::string& prefix) {
  Rng rng(seed);
  std::vector<LabeledVolume> out;
  for (int i = 0; i < n; ++i) {
    LabeledVolume v;
    v.sample_id = prefix + std::to_string(i);
    v.label = i % 2;
    v.voxels = Grid3<float>(tiny_encoder().input_shape);
    for (float& f : v.voxels.values()) f = static_cast<float>(0.3 * standard_normal(rng));
    if (v.label) {
      for (int z = 2; z < 4; ++z)
        for (int y = 4; y < 8; ++y)
          for (int x = 4; x < 8; ++x) v.voxels.at(x, y, z) += 1.5f;
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<UnlabeledVolume> unlabeled(const std::vector<LabeledVolume>& v) {
  std::vector<UnlabeledVolume> out;
  for (const auto& s : v) out.push_back({s.sample_id, s.voxels});
  return out;
}

SourceTrainConfig toy_config() {
  SourceTrainConfig c;
  c.encoder = tiny_encoder();
  c.lr = 3e-3;
  c.max_epochs = 3;
  c.seed = 17;
  return c;
}

bool same_params(nn::ConstParamList a, nn::ConstParamList b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i]->value == b[i]->value)) return false;
  }
  return true;
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

}  // namespace

TEST_CASE("learning-rate schedule") {
  CHECK(lr_schedule(1e-3, 0, 3e-4, 0.75) == 1e-3);
  CHECK(lr_schedule(1e-3, 10, 3e-4, 0.75) == doctest::Approx(1e-3 * std::pow(1.003, -0.75)).epsilon(1e-14));
  CHECK(lr_schedule(2.0, 1000, 0.0, 0.75) == 2.0);
  double prev = 1e-3;
  for (long long n = 1; n < 50; ++n) {
    const double next = lr_schedule(prev, n, 3e-4, 0.75);
    CHECK(next < prev);
    CHECK(next > 0.0);
    prev = next;
  }
}

TEST_CASE("early stopping") {
  const std::vector<double> losses{1.0, 0.9, 1.1, 1.0, 1.2, 1.3};
  SUBCASE("cumulative") {
    EarlyStopper s(EarlyStopMode::kCumulative, 3);
    int stopped_at = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      if (s.update(losses[i])) {
        stopped_at = static_cast<int>(i) + 1;
        break;
      }
    }
    CHECK(stopped_at == 6);
    CHECK(s.increases() == 3);
  }
  SUBCASE("consecutive") {
    EarlyStopper s(EarlyStopMode::kConsecutive, 3);
    for (double l : losses) CHECK_FALSE(s.update(l));
    CHECK(s.increases() == 2);
  }
  SUBCASE("equal losses are not increases") {
    EarlyStopper s(EarlyStopMode::kCumulative, 1);
    CHECK_FALSE(s.update(1.0));
    CHECK_FALSE(s.update(1.0));
    CHECK(s.update(1.0 + 1e-12));
  }
}

TEST_CASE("optimizers") {
  nn::Param p("w", {4});
  p.value.data = {1.0f, -2.0f, 0.5f, 3.0f};
  SUBCASE("sgd weight decay with zero gradient") {
    // float32 resolution
    nn::Sgd sgd({&p}, {1e-3, 0.0, 1e-3});
    const auto before = p.value.data;
    sgd.step();
    for (int i = 0; i < 4; ++i) CHECK(p.value.data[i] == doctest::Approx(before[i] * (1.0 - 1e-6)).epsilon(2e-7));
  }
  SUBCASE("sgd momentum") {
    nn::Sgd sgd({&p}, {0.1, 0.9, 0.0});
    double w = 1.0, buf = 0.0;
    for (int step = 0; step < 4; ++step) {
      p.grad.data = {1.0f, 0.0f, 0.0f, 0.0f};
      sgd.step();
      buf = step == 0 ? 1.0 : 0.9 * buf + 1.0;
      w -= 0.1 * buf;
      CHECK(p.value.data[0] == doctest::Approx(w).epsilon(1e-6));
    }
  }
  SUBCASE("adam first step has magnitude lr") {
    nn::Adam adam({&p}, {1e-2, 0.9, 0.999, 1e-12, 0.0});
    p.grad.data = {0.3f, -5.0f, 1e-3f, 0.0f};
    const auto before = p.value.data;
    adam.step();
    CHECK(p.value.data[0] == doctest::Approx(before[0] - 1e-2));
    CHECK(p.value.data[1] == doctest::Approx(before[1] + 1e-2));
    CHECK(p.value.data[2] == doctest::Approx(before[2] - 1e-2));
    CHECK(p.value.data[3] == before[3]);
  }
}

TEST_CASE("config serialization") {
  auto s = SourceTrainConfig::desk_scale();
  s.seed = 9;
  s.stop_mode = EarlyStopMode::kConsecutive;
  CHECK(SourceTrainConfig::from_json(s.to_json()).to_json() == s.to_json());
  AdaptConfig a;
  a.objective = AdversarialObjective::kGradientReversal;
  a.discriminator_hidden = {32};
  CHECK(AdaptConfig::from_json(a.to_json()).to_json() == a.to_json());
  auto j = a.to_json();
  j["objective"] = "nonsense";
  CHECK(kind_of([&] { AdaptConfig::from_json(j); }) == ErrorKind::kConfig);
  s.patience = 0;
  CHECK(kind_of([&] { s.validate(); }) == ErrorKind::kConfig);
}

TEST_CASE("source training is seeded and keeps the best epoch") {
  const auto train = toy_set(8, 1, "t");
  const auto val = toy_set(4, 2, "v");
  const auto cfg = toy_config();
  const auto a = train_source(train, val, cfg);
  const auto b = train_source(train, val, cfg);
  CHECK(same_params(std::as_const(a.model.encoder).params(), std::as_const(b.model.encoder).params()));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].train_loss == b.trace[i].train_loss);

  double best = -1;
  for (const auto& r : a.trace) best = std::max(best, r.val_auprc);
  CHECK(a.best_auprc == best);
  CHECK(a.trace.at(static_cast<std::size_t>(a.best_epoch - 1)).val_auprc == best);
  CHECK(a.checkpoint.metadata.at("epoch") == a.best_epoch);

  // the stored checkpoint reproduces the selected model
  const auto back = Classifier::from_checkpoint(a.checkpoint);
  std::vector<const Grid3<float>*> vols;
  for (const auto& v : val) vols.push_back(&v.voxels);
  CHECK(back.predict(vols) == a.model.predict(vols));

  auto other = cfg;
  other.seed = 18;
  const auto c = train_source(train, val, other);
  CHECK_FALSE(same_params(std::as_const(a.model.encoder).params(), std::as_const(c.model.encoder).params()));
}

TEST_CASE("source training input errors") {
  const auto train = toy_set(4, 1, "t");
  auto val = toy_set(2, 2, "v");
  CHECK(kind_of([&] { train_source(train, {}, toy_config()); }) == ErrorKind::kArgument);
  CHECK(kind_of([&] { train_source({}, val, toy_config()); }) == ErrorKind::kArgument);
  val[1].label = 0;
  CHECK(kind_of([&] { train_source(train, val, toy_config()); }) == ErrorKind::kConfig);
}

TEST_CASE("overfits a small labeled set") {
  const auto train = toy_set(20, 5, "o");
  auto cfg = toy_config();
  cfg.augment = false;
  cfg.max_epochs = 25;
  cfg.patience = 1000;
  const auto r = train_source(train, train, cfg);
  REQUIRE(r.trace.size() >= 2);
  const double first = r.trace.front().val_loss;
  double last = r.trace.back().val_loss;
  for (const auto& e : r.trace) last = std::min(last, e.val_loss);
  MESSAGE("initial " << first << " final " << last);
  CHECK(last < 0.1 * first);
  CHECK(r.best_auprc == doctest::Approx(1.0));
}

TEST_CASE("non-UDA baseline splits internally") {
  const auto labeled = toy_set(16, 3, "n");
  auto cfg = toy_config();
  cfg.max_epochs = 2;
  const auto r = train_nonuda_baseline(labeled, cfg);
  CHECK(r.epochs_run >= 1);
  CHECK(r.checkpoint.metadata.at("kind") == "nonuda_classifier");
  const auto one_class = std::vector<LabeledVolume>(4, labeled[0]);
  CHECK_THROWS_AS(train_nonuda_baseline(one_class, cfg), Error);
}

TEST_CASE("adaptation keeps the source encoder frozen") {
  const auto src_l = toy_set(6, 7, "s");
  const auto tgt_l = toy_set(4, 8, "g");
  Classifier source(tiny_encoder());
  source.init(3);
  const Classifier snapshot = source;
  AdaptConfig cfg;
  cfg.epochs = 2;
  cfg.discriminator_hidden = {16, 8};
  cfg.seed = 4;

  int steps = 0;
  bool frozen = true;
  bool step0_equal = false;
  const auto observer = [&](int epoch, int step, const nn::Encoder& s, const nn::Encoder& t) {
    frozen = frozen && same_params(s.params(), snapshot.encoder.params());
    if (epoch == 0 && step == 0) step0_equal = same_params(s.params(), t.params());
    ++steps;
  };
  const auto r = adapt_target(source, unlabeled(src_l), unlabeled(tgt_l), cfg, observer);
  CHECK(steps == 2 * 2);  // two epochs of 4 targets at batch size 2
  CHECK(frozen);
  CHECK(step0_equal);
  CHECK(same_params(std::as_const(source.encoder).params(), snapshot.encoder.params()));
  CHECK(same_params(std::as_const(r.target.head).params(), snapshot.head.params()));
  CHECK_FALSE(same_params(std::as_const(r.target.encoder).params(), snapshot.encoder.params()));
  REQUIRE(r.trace.size() == 2);
  CHECK(r.trace[1].lr == doctest::Approx(lr_schedule(cfg.lr, 1, cfg.schedule_gamma, cfg.schedule_lambda)));
  CHECK(r.checkpoint.has_part("discriminator"));

  const auto again = adapt_target(source, unlabeled(src_l), unlabeled(tgt_l), cfg);
  CHECK(same_params(std::as_const(again.target.encoder).params(), std::as_const(r.target.encoder).params()));

  cfg.objective = AdversarialObjective::kGradientReversal;
  const auto grl = adapt_target(source, unlabeled(src_l), unlabeled(tgt_l), cfg);
  CHECK_FALSE(same_params(std::as_const(grl.target.encoder).params(), snapshot.encoder.params()));

  cfg.epochs = 0;
  const auto none = adapt_target(source, unlabeled(src_l), unlabeled(tgt_l), cfg);
  CHECK(same_params(std::as_const(none.target.encoder).params(), snapshot.encoder.params()));
}

TEST_CASE("domain probe") {
  Rng rng(12);
  auto features = [&](int n, double shift) {
    nn::Tensor t({n, 6});
    for (float& f : t.values()) f = static_cast<float>(standard_normal(rng));
    for (int i = 0; i < n; ++i) t.data[static_cast<std::size_t>(i) * 6] += static_cast<float>(shift);
    return t;
  };
  ProbeConfig cfg;
  cfg.hidden = {16};
  cfg.seed = 1;
  CHECK(domain_probe_accuracy(features(40, 0.0), features(40, 8.0), cfg) >= 0.95);
  CHECK(domain_probe_accuracy(features(200, 0.0), features(200, 0.0), cfg) <= 0.65);
  const auto a = features(20, 0.0), b = features(20, 1.0);
  CHECK(domain_probe_accuracy(a, b, cfg) == domain_probe_accuracy(a, b, cfg));
}
