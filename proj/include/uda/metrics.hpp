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

#ifndef UDA_METRICS_HPP_
#define UDA_METRICS_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uda/error.hpp"
#include "uda/fraction.hpp"
#include "uda/random.hpp"

namespace uda::eval {

struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Rates kept as exact fractions; a rate whose denominator would be zero is
// reported with den == 0.
struct ClassificationMetrics {
  ConfusionMatrix confusion;
  Fraction sensitivity;  // tp / (tp + fn)
  Fraction specificity;  // tn / (tn + fp)
  Fraction accuracy;     // (tp + tn) / total
};

ClassificationMetrics classification_metrics(std::span<const int> preds, std::span<const int> labels);
ClassificationMetrics metrics_from_confusion(const ConfusionMatrix& cm);

// Mann-Whitney AUROC, ties counted as half: num / den with
// num = 2 * (wins + ties/2) and den = 2 * positives * negatives.
Fraction roc_auc_exact(std::span<const double> scores, std::span<const int> labels);
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
// Curve from (0,0) to (1,1), one vertex per distinct score threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

// Step-wise average precision (area under the precision-recall curve).
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct BootstrapResult {
  double mean = 0.0;
  double sd = 0.0;  // n-1 denominator
  int n_resamples = 0;
  std::vector<double> aucs;
  std::vector<std::vector<RocPoint>> curves;
};

// Case-level resampling with replacement. Each resample draws n indices with
// uniform_index from an mt19937_64 seeded with derive_seed(seed,
// "bootstrap"); a draw lacking either class is discarded and redrawn, at
// most 1000 times per resample (ErrorKind::kResampling beyond that).
BootstrapResult bootstrap_roc(std::span<const double> scores, std::span<const int> labels, int n_resamples,
                              std::uint64_t seed);

// Mean TPR over a uniform FPR grid plus the pointwise min/max band.
struct RocBand {
  std::vector<double> fpr;
  std::vector<double> mean_tpr;
  std::vector<double> min_tpr;
  std::vector<double> max_tpr;
};
RocBand roc_band(const std::vector<std::vector<RocPoint>>& curves, int grid_points = 101);

struct McNemarResult {
  double p_value = 1.0;
  std::int64_t b = 0;  // a correct, b wrong
  std::int64_t c = 0;  // a wrong, b correct
  bool exact = true;
  bool no_discordance = false;
  bool significant = false;  // p < 0.05
};

inline constexpr std::int64_t kMcNemarExactLimit = 25;
inline constexpr double kSignificanceLevel = 0.05;

// Exact two-sided binomial test for b + c <= 25, continuity-corrected
// chi-square otherwise.
McNemarResult mcnemar_counts(std::int64_t b, std::int64_t c);
McNemarResult mcnemar(std::span<const int> preds_a, std::span<const int> preds_b, std::span<const int> labels);

struct SplitResult {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Stratified, seeded train/val/test partition. Split sizes come from
// floor allocation plus largest remainder (ties go to the split with the
// smaller floor, then the later split); every split receives at least one
// sample. Within each split ids keep their input order.
SplitResult split_source(const std::vector<std::string>& ids, const std::vector<int>& labels,
                         std::array<double, 3> fractions, std::uint64_t seed);
std::array<std::int64_t, 3> split_sizes(std::int64_t n, std::array<double, 3> fractions);

struct FoldPrediction {
  int prediction = 0;
  double score = 0.0;
  int label = 0;
};

struct FoldRecord {
  std::size_t fold = 0;
  std::size_t test_index = 0;
  std::vector<std::size_t> train_indices;
  std::uint64_t seed = 0;
  FoldPrediction result;
};

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);

// Leave-one-out: fold i trains on every index except i and predicts i.
// Folds run in index order with seeds from fold_seed(seed, i).
template <typename TrainFn, typename EvalFn>
std::vector<FoldRecord> loocv(std::size_t n, std::uint64_t seed, TrainFn&& train_fn, EvalFn&& eval_fn) {
  require(n >= 2, ErrorKind::kArgument, "loocv: need at least two samples");
  std::vector<FoldRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    FoldRecord rec;
    rec.fold = i;
    rec.test_index = i;
    rec.seed = fold_seed(seed, i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) rec.train_indices.push_back(j);
    }
    auto model = train_fn(rec.train_indices, rec.seed);
    rec.result = eval_fn(model, i);
    out.push_back(std::move(rec));
  }
  return out;
}

struct EvalReport {
  double threshold = 0.5;
  std::optional<double> auroc;  // absent when only one class is present
  std::optional<BootstrapResult> bootstrap;
  ClassificationMetrics metrics;
};

// AUROC + bootstrap (when both classes occur) and thresholded rates.
EvalReport make_eval_report(std::span<const double> scores, std::span<const int> labels, double threshold,
                            int n_resamples, std::uint64_t seed);
nlohmann::json to_json(const EvalReport& r, bool include_curves = false);
nlohmann::json to_json(const ClassificationMetrics& m);
nlohmann::json to_json(const McNemarResult& m);

}  // namespace uda::eval

#endif  // UDA_METRICS_HPP_
