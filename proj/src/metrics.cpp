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

#include "uda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uda::eval {

using nlohmann::json;

namespace {

void check_pairs(std::size_t a, std::size_t b, const char* what) {
  require(a == b, ErrorKind::kArgument, std::string(what) + ": length mismatch");
}

void check_binary(std::span<const int> v, const char* what) {
  for (int x : v) require(x == 0 || x == 1, ErrorKind::kArgument, std::string(what) + ": values must be 0 or 1");
}

// Indices sorted by descending score; ties keep index order.
std::vector<std::size_t> order_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

std::pair<std::int64_t, std::int64_t> class_counts(std::span<const int> labels) {
  std::int64_t p = 0;
  for (int y : labels) p += y;
  return {p, static_cast<std::int64_t>(labels.size()) - p};
}

}  // namespace

ClassificationMetrics metrics_from_confusion(const ConfusionMatrix& cm) {
  ClassificationMetrics m;
  m.confusion = cm;
  m.sensitivity = {cm.tp, cm.tp + cm.fn};
  m.specificity = {cm.tn, cm.tn + cm.fp};
  m.accuracy = {cm.tp + cm.tn, cm.total()};
  return m;
}

ClassificationMetrics classification_metrics(std::span<const int> preds, std::span<const int> labels) {
  check_pairs(preds.size(), labels.size(), "classification_metrics");
  require(!labels.empty(), ErrorKind::kArgument, "classification_metrics: empty input");
  check_binary(preds, "classification_metrics");
  check_binary(labels, "classification_metrics");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i]) (preds[i] ? cm.tp : cm.fn)++;
    else (preds[i] ? cm.fp : cm.tn)++;
  }
  return metrics_from_confusion(cm);
}

Fraction roc_auc_exact(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores.size(), labels.size(), "roc_auc");
  check_binary(labels, "roc_auc");
  const auto [pos, neg] = class_counts(labels);
  require(pos > 0 && neg > 0, ErrorKind::kUndefinedMetric, "roc_auc: need both classes");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // twice the positive rank sum, with midranks for ties
  std::int64_t two_rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[idx[k]]) two_rank_sum += twice_mid;
    }
    i = j + 1;
  }
  return {two_rank_sum - pos * (pos + 1), 2 * pos * neg};
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  return roc_auc_exact(scores, labels).value();
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores.size(), labels.size(), "roc_curve");
  const auto [pos, neg] = class_counts(labels);
  require(pos > 0 && neg > 0, ErrorKind::kUndefinedMetric, "roc_curve: need both classes");
  const auto idx = order_desc(scores);
  std::vector<RocPoint> pts{{0.0, 0.0}};
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? tp : fp)++;
      ++j;
    }
    pts.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
    i = j;
  }
  return pts;
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores.size(), labels.size(), "average_precision");
  check_binary(labels, "average_precision");
  const auto [pos, neg] = class_counts(labels);
  (void)neg;
  require(pos > 0, ErrorKind::kUndefinedMetric, "average_precision: no positive labels");
  const auto idx = order_desc(scores);
  std::int64_t tp = 0, fp = 0, tp_prev = 0;
  double ap = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? tp : fp)++;
      ++j;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += static_cast<double>(tp - tp_prev) / static_cast<double>(pos) * precision;
    tp_prev = tp;
    i = j;
  }
  return ap;
}

BootstrapResult bootstrap_roc(std::span<const double> scores, std::span<const int> labels, int n_resamples,
                              std::uint64_t seed) {
  check_pairs(scores.size(), labels.size(), "bootstrap_roc");
  require(n_resamples >= 1, ErrorKind::kArgument, "bootstrap_roc: need at least one resample");
  const auto [pos, neg] = class_counts(labels);
  require(pos > 0 && neg > 0, ErrorKind::kUndefinedMetric, "bootstrap_roc: need both classes");
  constexpr int kMaxAttempts = 1000;
  const std::size_t n = scores.size();
  Rng rng(derive_seed(seed, "bootstrap"));
  BootstrapResult out;
  out.n_resamples = n_resamples;
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (int r = 0; r < n_resamples; ++r) {
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      std::int64_t p = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(uniform_index(rng, n));
        s[i] = scores[k];
        y[i] = labels[k];
        p += y[i];
      }
      ok = p > 0 && p < static_cast<std::int64_t>(n);
    }
    require(ok, ErrorKind::kResampling, "bootstrap_roc: could not draw a two-class resample in 1000 attempts");
    out.aucs.push_back(roc_auc(s, y));
    out.curves.push_back(roc_curve(s, y));
  }
  double sum = 0.0;
  for (double a : out.aucs) sum += a;
  out.mean = sum / n_resamples;
  double ss = 0.0;
  for (double a : out.aucs) ss += (a - out.mean) * (a - out.mean);
  out.sd = n_resamples > 1 ? std::sqrt(ss / (n_resamples - 1)) : 0.0;
  return out;
}

namespace {

double tpr_at(const std::vector<RocPoint>& c, double f) {
  double best = 0.0;
  bool exact = false;
  for (const auto& p : c) {
    if (p.fpr == f) {
      best = exact ? std::max(best, p.tpr) : p.tpr;
      exact = true;
    }
  }
  if (exact) return best;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (c[i - 1].fpr < f && f < c[i].fpr) {
      const double t = (f - c[i - 1].fpr) / (c[i].fpr - c[i - 1].fpr);
      return c[i - 1].tpr + t * (c[i].tpr - c[i - 1].tpr);
    }
  }
  return c.back().tpr;
}

}  // namespace

RocBand roc_band(const std::vector<std::vector<RocPoint>>& curves, int grid_points) {
  require(!curves.empty() && grid_points >= 2, ErrorKind::kArgument, "roc_band: need curves and >= 2 grid points");
  RocBand band;
  for (int i = 0; i < grid_points; ++i) {
    const double f = static_cast<double>(i) / (grid_points - 1);
    double sum = 0.0, lo = 1.0, hi = 0.0;
    for (const auto& c : curves) {
      const double t = tpr_at(c, f);
      sum += t;
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    band.fpr.push_back(f);
    band.mean_tpr.push_back(sum / static_cast<double>(curves.size()));
    band.min_tpr.push_back(lo);
    band.max_tpr.push_back(hi);
  }
  return band;
}

McNemarResult mcnemar_counts(std::int64_t b, std::int64_t c) {
  require(b >= 0 && c >= 0, ErrorKind::kArgument, "mcnemar: counts must be non-negative");
  McNemarResult r;
  r.b = b;
  r.c = c;
  const std::int64_t n = b + c;
  if (n == 0) {
    r.no_discordance = true;
    r.p_value = 1.0;
    return r;
  }
  if (n <= kMcNemarExactLimit) {
    r.exact = true;
    const std::int64_t m = std::min(b, c);
    // sum_{k<=m} C(n,k), exact in 64-bit for n <= 25
    std::uint64_t coef = 1, tail = 0;
    for (std::int64_t k = 0; k <= m; ++k) {
      tail += coef;
      coef = coef * static_cast<std::uint64_t>(n - k) / static_cast<std::uint64_t>(k + 1);
    }
    r.p_value = std::min(1.0, 2.0 * std::ldexp(static_cast<double>(tail), -static_cast<int>(n)));
  } else {
    r.exact = false;
    const double d = std::fabs(static_cast<double>(b - c)) - 1.0;
    const double chi2 = d * d / static_cast<double>(n);
    r.p_value = std::erfc(std::sqrt(chi2 / 2.0));
  }
  r.significant = r.p_value < kSignificanceLevel;
  return r;
}

McNemarResult mcnemar(std::span<const int> a, std::span<const int> b, std::span<const int> labels) {
  check_pairs(a.size(), labels.size(), "mcnemar");
  check_pairs(b.size(), labels.size(), "mcnemar");
  std::int64_t nb = 0, nc = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ca = a[i] == labels[i], cb = b[i] == labels[i];
    if (ca && !cb) ++nb;
    if (!ca && cb) ++nc;
  }
  return mcnemar_counts(nb, nc);
}

std::array<std::int64_t, 3> split_sizes(std::int64_t n, std::array<double, 3> fractions) {
  constexpr std::int64_t kScale = 1000000;
  std::array<std::int64_t, 3> w{};
  std::int64_t wsum = 0;
  for (int j = 0; j < 3; ++j) {
    require(fractions[j] >= 0.0, ErrorKind::kArgument, "split: fractions must be non-negative");
    w[j] = std::llround(fractions[j] * kScale);
    wsum += w[j];
  }
  require(wsum == kScale, ErrorKind::kArgument, "split: fractions must sum to 1");
  std::array<std::int64_t, 3> size{}, rem{};
  std::int64_t used = 0;
  for (int j = 0; j < 3; ++j) {
    size[j] = n * w[j] / kScale;
    rem[j] = n * w[j] % kScale;
    used += size[j];
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (rem[a] != rem[b]) return rem[a] > rem[b];
    if (size[a] != size[b]) return size[a] < size[b];
    return a > b;
  });
  for (std::int64_t k = 0; k < n - used; ++k) ++size[order[static_cast<std::size_t>(k)]];
  return size;
}

SplitResult split_source(const std::vector<std::string>& ids, const std::vector<int>& labels,
                         std::array<double, 3> fractions, std::uint64_t seed) {
  const auto n = static_cast<std::int64_t>(ids.size());
  require(labels.empty() || labels.size() == ids.size(), ErrorKind::kArgument, "split_source: labels/ids mismatch");
  require(n >= 3, ErrorKind::kArgument, "split_source: need at least 3 samples to fill three splits");
  auto sizes = split_sizes(n, fractions);
  for (int j = 0; j < 3; ++j) {
    if (sizes[j] == 0) {
      auto big = std::max_element(sizes.begin(), sizes.end());
      --*big;
      sizes[j] = 1;
    }
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ids.size(); ++i) ((!labels.empty() && labels[i]) ? pos : neg).push_back(i);
  auto psizes = pos.empty() ? std::array<std::int64_t, 3>{} : split_sizes(static_cast<std::int64_t>(pos.size()), fractions);
  std::array<std::int64_t, 3> nsizes{};
  for (int j = 0; j < 3; ++j) nsizes[j] = sizes[j] - psizes[j];
  // rebalance so both classes fit inside the overall split sizes
  for (bool changed = true; changed;) {
    changed = false;
    for (int j = 0; j < 3; ++j) {
      if (nsizes[j] < 0) {
        const int k = static_cast<int>(std::max_element(nsizes.begin(), nsizes.end()) - nsizes.begin());
        --psizes[j];
        ++nsizes[j];
        ++psizes[k];
        --nsizes[k];
        changed = true;
      }
    }
  }

  Rng rng(derive_seed(seed, "split"));
  shuffle(pos, rng);
  shuffle(neg, rng);
  std::array<std::vector<std::size_t>, 3> parts;
  auto deal = [&](const std::vector<std::size_t>& pool, const std::array<std::int64_t, 3>& counts) {
    std::size_t at = 0;
    for (int j = 0; j < 3; ++j) {
      for (std::int64_t k = 0; k < counts[j]; ++k) parts[j].push_back(pool[at++]);
    }
  };
  deal(pos, psizes);
  deal(neg, nsizes);
  SplitResult out;
  std::array<std::vector<std::string>*, 3> dst{&out.train, &out.val, &out.test};
  for (int j = 0; j < 3; ++j) {
    std::sort(parts[j].begin(), parts[j].end());
    for (std::size_t i : parts[j]) dst[j]->push_back(ids[i]);
  }
  return out;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) { return derive_seed(seed, "loocv-fold", fold); }

EvalReport make_eval_report(std::span<const double> scores, std::span<const int> labels, double threshold,
                            int n_resamples, std::uint64_t seed) {
  check_pairs(scores.size(), labels.size(), "evaluate");
  EvalReport r;
  r.threshold = threshold;
  std::vector<int> preds(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] >= threshold ? 1 : 0;
  r.metrics = classification_metrics(preds, labels);
  const auto [pos, neg] = class_counts(labels);
  if (pos > 0 && neg > 0) {
    r.auroc = roc_auc(scores, labels);
    if (n_resamples > 0) r.bootstrap = bootstrap_roc(scores, labels, n_resamples, seed);
  }
  return r;
}

namespace {

json rate_json(const Fraction& f) {
  json j = {{"numerator", f.num}, {"denominator", f.den}};
  if (f.den > 0) {
    j["value"] = f.value();
    j["percent"] = format_percent(f.num, f.den);
  } else {
    j["value"] = nullptr;
    j["percent"] = nullptr;
  }
  return j;
}

}  // namespace

json to_json(const ClassificationMetrics& m) {
  return {
      {"confusion", {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}, {"fn", m.confusion.fn}}},
      {"sensitivity", rate_json(m.sensitivity)},
      {"specificity", rate_json(m.specificity)},
      {"accuracy", rate_json(m.accuracy)},
  };
}

json to_json(const EvalReport& r, bool include_curves) {
  json j = to_json(r.metrics);
  j["threshold"] = r.threshold;
  j["auroc"] = r.auroc ? json(*r.auroc) : json(nullptr);
  if (r.bootstrap) {
    json b = {{"mean", r.bootstrap->mean}, {"sd", r.bootstrap->sd}, {"n_resamples", r.bootstrap->n_resamples},
              {"aucs", r.bootstrap->aucs}};
    if (include_curves) {
      json curves = json::array();
      for (const auto& c : r.bootstrap->curves) {
        json pts = json::array();
        for (const auto& p : c) pts.push_back({p.fpr, p.tpr});
        curves.push_back(pts);
      }
      b["curves"] = curves;
    }
    j["auroc_bootstrap"] = b;
  } else {
    j["auroc_bootstrap"] = nullptr;
  }
  return j;
}

json to_json(const McNemarResult& m) {
  return {{"p_value", m.p_value},
          {"b", m.b},
          {"c", m.c},
          {"exact", m.exact},
          {"no_discordance", m.no_discordance},
          {"alpha", kSignificanceLevel},
          {"significant", m.significant}};
}

}  // namespace uda::eval
