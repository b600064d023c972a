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
#include <map>
#include <set>

#include "doctest.h"
#include "uda/error.hpp"
#include "uda/fraction.hpp"
#include "uda/metrics.hpp"
#include "uda/random.hpp"

using namespace uda;
using namespace uda::eval;

namespace {

// All positive/negative pairs, ties worth one half.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return wins / pairs;
}

double binom_two_sided(int b, int c) {
  const int n = b + c, k = std::min(b, c);
  double tail = 0;
  for (int i = 0; i <= k; ++i) {
    double comb = 1;
    for (int j = 1; j <= i; ++j) comb = comb * (n - i + j) / j;
    tail += comb;
  }
  return std::min(1.0, 2.0 * tail / std::pow(2.0, n));
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

struct Instance {
  std::vector<double> s;
  std::vector<int> y;
};

Instance random_instance(Rng& rng) {
  Instance in;
  const int n = 2 + static_cast<int>(uniform_index(rng, 30));
  for (int i = 0; i < n; ++i) {
    // coarse scores so that ties are common
    in.s.push_back(static_cast<double>(uniform_index(rng, 8)) / 8.0);
    in.y.push_back(static_cast<int>(uniform_index(rng, 2)));
  }
  in.y[0] = 1;
  in.y[1] = 0;
  return in;
}

}  // namespace

TEST_CASE("AUROC agrees with the pairwise definition") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = random_instance(rng);
    const double ref = pairwise_auc(in.s, in.y);
    CHECK(roc_auc(in.s, in.y) == doctest::Approx(ref).epsilon(1e-12));
    CHECK(roc_auc_exact(in.s, in.y).value() == doctest::Approx(ref).epsilon(1e-12));
    // trapezoidal area under the curve equals the Mann-Whitney statistic
    const auto curve = roc_curve(in.s, in.y);
    double area = 0;
    for (std::size_t i = 1; i < curve.size(); ++i)
      area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2;
    CHECK(area == doctest::Approx(ref).epsilon(1e-9));
    CHECK(curve.front().fpr == 0.0);
    CHECK(curve.front().tpr == 0.0);
    CHECK(curve.back().fpr == 1.0);
    CHECK(curve.back().tpr == 1.0);
  }
}

TEST_CASE("AUROC edge cases") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(roc_auc(s, y) == doctest::Approx(0.75));
  const std::vector<int> one{1, 1, 1, 1};
  CHECK(kind_of([&] { roc_auc(s, one); }) == ErrorKind::kUndefinedMetric);
  const std::vector<int> short_y{1, 0};
  CHECK(kind_of([&] { roc_auc(s, short_y); }) == ErrorKind::kArgument);
  // invariant under monotone transforms
  std::vector<double> t;
  for (double v : s) t.push_back(std::exp(3 * v) - 7);
  CHECK(roc_auc(t, y) == roc_auc(s, y));
}

TEST_CASE("average precision") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5};
  const std::vector<int> y{1, 0, 1, 0, 1};
  CHECK(average_precision(s, y) == doctest::Approx((1.0 + 2.0 / 3 + 3.0 / 5) / 3));
  const std::vector<int> perfect{1, 1, 0, 0, 0};
  CHECK(average_precision(s, perfect) == doctest::Approx(1.0));
  // all-tied scores give the prevalence
  const std::vector<double> flat(5, 0.5);
  CHECK(average_precision(flat, y) == doctest::Approx(0.6));
}

TEST_CASE("McNemar") {
  CHECK(mcnemar_counts(10, 0).p_value == doctest::Approx(0.001953125).epsilon(1e-9));
  CHECK(format_fixed2(mcnemar_counts(10, 0).p_value * 1000) == "1.95");
  for (int b = 0; b <= 25; ++b)
    for (int c = 0; b + c <= 25; ++c) {
      if (b + c == 0) continue;
      const auto r = mcnemar_counts(b, c);
      CHECK(r.exact);
      CHECK(r.p_value == doctest::Approx(binom_two_sided(b, c)).epsilon(1e-12));
      CHECK(r.significant == (r.p_value < 0.05));
      CHECK(r.p_value == mcnemar_counts(c, b).p_value);
    }
  const auto big = mcnemar_counts(20, 8);
  CHECK_FALSE(big.exact);
  const double x = (12.0 - 1) * (12.0 - 1) / 28.0;
  CHECK(big.p_value == doctest::Approx(std::erfc(std::sqrt(x / 2))).epsilon(1e-12));
  const auto none = mcnemar_counts(0, 0);
  CHECK(none.no_discordance);
  CHECK(none.p_value == 1.0);

  const std::vector<int> labels{1, 1, 0, 0, 1};
  const std::vector<int> a{1, 1, 0, 1, 0};
  const std::vector<int> b{0, 1, 0, 0, 1};
  const auto r = mcnemar(a, b, labels);
  CHECK(r.b == 1);  // a right, b wrong: index 0
  CHECK(r.c == 2);  // a wrong, b right: indices 3 and 4
}

TEST_CASE("classification rates keep exact fractions") {
  struct Row {
    ConfusionMatrix cm;
    const char* sens;
    const char* spec;
    const char* acc;
  };
  const Row rows[] = {
      {{2, 1, 45, 2}, "50 (2/4)", "97.83 (45/46)", "94 (47/50)"},
      {{3, 15, 30, 2}, "60 (3/5)", "66.67 (30/45)", "66 (33/50)"},
      {{1, 12, 34, 3}, "25 (1/4)", "73.91 (34/46)", "70 (35/50)"},
      {{3, 26, 19, 2}, "60 (3/5)", "42.22 (19/45)", "44 (22/50)"},
  };
  for (const auto& r : rows) {
    const auto m = metrics_from_confusion(r.cm);
    CHECK(format_percent_with_counts(m.sensitivity.num, m.sensitivity.den) == r.sens);
    CHECK(format_percent_with_counts(m.specificity.num, m.specificity.den) == r.spec);
    CHECK(format_percent_with_counts(m.accuracy.num, m.accuracy.den) == r.acc);
  }
  const std::vector<int> preds{1, 0, 1, 1, 0, 0};
  const std::vector<int> labels{1, 1, 0, 1, 0, 0};
  const auto m = classification_metrics(preds, labels);
  CHECK(m.confusion == ConfusionMatrix{2, 1, 2, 1});
  CHECK(m.sensitivity == Fraction{2, 3});
  const std::vector<int> neg{0, 0, 0, 0, 0, 0};
  CHECK(classification_metrics(preds, neg).sensitivity.den == 0);
}

TEST_CASE("split sizes and stratified partition") {
  const std::array<double, 3> f{0.7, 0.1, 0.2};
  CHECK(split_sizes(318, f) == std::array<std::int64_t, 3>{222, 32, 64});
  CHECK(split_sizes(10, f) == std::array<std::int64_t, 3>{7, 1, 2});
  for (std::int64_t n = 3; n < 400; n += 7) {
    const auto s = split_sizes(n, f);
    CHECK(s[0] + s[1] + s[2] == n);
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(static_cast<double>(s[i]) - n * f[i]) < 1.0 + 1e-9);
    }
  }

  std::vector<std::string> ids;
  std::vector<int> labels;
  for (int i = 0; i < 318; ++i) {
    ids.push_back("id" + std::to_string(i));
    labels.push_back(i % 3 == 0);
  }
  const auto a = split_source(ids, labels, f, 5);
  const auto b = split_source(ids, labels, f, 5);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 222);
  CHECK(a.val.size() == 32);
  CHECK(a.test.size() == 64);
  std::set<std::string> all;
  for (const auto* part : {&a.train, &a.val, &a.test}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 318);
  std::map<std::string, int> lab;
  for (int i = 0; i < 318; ++i) lab[ids[i]] = labels[i];
  auto positives = [&](const std::vector<std::string>& v) {
    int p = 0;
    for (const auto& id : v) p += lab[id];
    return p;
  };
  CHECK(positives(a.train) + positives(a.val) + positives(a.test) == 106);
  CHECK(std::abs(positives(a.train) - 106 * 0.7) <= 1.0);
  CHECK(std::abs(positives(a.test) - 106 * 0.2) <= 1.0);
  CHECK(split_source(ids, labels, f, 6).train != a.train);
  // tiny sets still fill every split
  const std::vector<std::string> three{"a", "b", "c"};
  const auto t = split_source(three, {1, 0, 0}, f, 1);
  CHECK(t.train.size() == 1);
  CHECK(t.val.size() == 1);
  CHECK(t.test.size() == 1);
  CHECK(kind_of([&] { split_source({"a", "b"}, {1, 0}, f, 1); }) == ErrorKind::kArgument);
  CHECK(kind_of([&] { split_sizes(10, {0.5, 0.1, 0.1}); }) == ErrorKind::kArgument);
}

TEST_CASE("leave-one-out folds") {
  std::vector<std::vector<std::size_t>> seen;
  const auto folds = loocv(
      3, 7,
      [&](const std::vector<std::size_t>& train, std::uint64_t seed) {
        seen.push_back(train);
        return seed;
      },
      [](std::uint64_t model, std::size_t i) {
        return FoldPrediction{static_cast<int>(i % 2), static_cast<double>(model % 100), 0};
      });
  REQUIRE(folds.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(folds[i].test_index == i);
    CHECK(folds[i].train_indices.size() == 2);
    CHECK(std::find(folds[i].train_indices.begin(), folds[i].train_indices.end(), i) ==
          folds[i].train_indices.end());
    CHECK(folds[i].seed == fold_seed(7, i));
    CHECK(seen[i] == folds[i].train_indices);
  }
  CHECK(folds[0].seed != folds[1].seed);
  CHECK(kind_of([] { loocv(1, 0, [](auto&&, auto) { return 0; }, [](int, std::size_t) { return FoldPrediction{}; }); }) ==
        ErrorKind::kArgument);
}

TEST_CASE("bootstrap matches an independent resampler") {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.35, 0.9};
  const std::vector<int> y{0, 0, 1, 0, 1, 1, 0, 1};
  const int n_res = 200;
  const auto r = bootstrap_roc(s, y, n_res, 99);
  Rng rng(derive_seed(99, "bootstrap"));
  std::vector<double> aucs;
  while (static_cast<int>(aucs.size()) < n_res) {
    std::vector<double> rs;
    std::vector<int> ry;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto k = uniform_index(rng, s.size());
      rs.push_back(s[k]);
      ry.push_back(y[k]);
    }
    const int p = static_cast<int>(std::count(ry.begin(), ry.end(), 1));
    if (p == 0 || p == static_cast<int>(ry.size())) continue;
    aucs.push_back(pairwise_auc(rs, ry));
  }
  double m = 0;
  for (double a : aucs) m += a;
  m /= n_res;
  double ss = 0;
  for (double a : aucs) ss += (a - m) * (a - m);
  CHECK(r.mean == doctest::Approx(m).epsilon(1e-12));
  CHECK(r.sd == doctest::Approx(std::sqrt(ss / (n_res - 1))).epsilon(1e-12));
  for (int i = 0; i < n_res; ++i) CHECK(r.aucs[i] == doctest::Approx(aucs[i]).epsilon(1e-12));
  CHECK(r.curves.size() == static_cast<std::size_t>(n_res));

  const auto band = roc_band(r.curves, 11);
  for (int i = 0; i < 11; ++i) {
    CHECK(band.min_tpr[i] <= band.mean_tpr[i] + 1e-12);
    CHECK(band.mean_tpr[i] <= band.max_tpr[i] + 1e-12);
  }
  CHECK(band.mean_tpr.back() == doctest::Approx(1.0));

  const std::vector<int> one(8, 1);
  CHECK(kind_of([&] { bootstrap_roc(s, one, 10, 1); }) == ErrorKind::kUndefinedMetric);
}

TEST_CASE("evaluation report") {
  const std::vector<double> s{0.2, 0.7, 0.4, 0.9};
  const std::vector<int> y{0, 1, 0, 1};
  const auto r = make_eval_report(s, y, 0.5, 20, 3);
  REQUIRE(r.auroc);
  CHECK(*r.auroc == 1.0);
  CHECK(r.bootstrap);
  CHECK(r.metrics.accuracy == Fraction{1, 1});
  const auto j = to_json(r);
  CHECK(j.contains("auroc"));
  const std::vector<int> one(4, 0);
  const auto single = make_eval_report(s, one, 0.5, 20, 3);
  CHECK_FALSE(single.auroc);
  CHECK(single.metrics.confusion.fp == 2);
}
