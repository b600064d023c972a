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

#include "uda/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "uda/error.hpp"
#include "uda/metrics.hpp"
#include "uda/random.hpp"

namespace uda::train {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(const nn::EncoderConfig& cfg) : encoder(cfg), head(nn::build_head(cfg.feature_dim())) {}

void Classifier::init(std::uint64_t seed) {
  encoder.init(derive_seed(seed, "encoder"));
  head.init(derive_seed(seed, "head"));
}

nn::Tensor encode_all(const nn::Encoder& enc, const std::vector<const Grid3<float>*>& volumes, int batch) {
  const int f = enc.config().feature_dim();
  nn::Tensor out({static_cast<int>(volumes.size()), f});
  for (std::size_t i = 0; i < volumes.size(); i += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(volumes.size(), i + static_cast<std::size_t>(batch));
    const nn::Tensor x = nn::make_batch(std::span(volumes.data() + i, end - i));
    const nn::Tensor feat = enc.forward(x);
    std::copy(feat.data.begin(), feat.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * f));
  }
  return out;
}

std::vector<double> Classifier::predict(const std::vector<const Grid3<float>*>& volumes) const {
  if (volumes.empty()) return {};
  const nn::Tensor logits = head.forward(encode_all(encoder, volumes));
  std::vector<double> out(volumes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nn::sigmoid(logits.data[i]);
  return out;
}

nn::ParamList Classifier::params() {
  nn::ParamList p = encoder.params();
  for (nn::Param* q : head.params()) p.push_back(q);
  return p;
}

nn::Checkpoint Classifier::to_checkpoint(json metadata) const {
  nn::Checkpoint c;
  nn::add_params(c, encoder.params());
  nn::add_params(c, head.params());
  metadata["encoder"] = encoder.config().to_json();
  metadata["feature_dim"] = encoder.config().feature_dim();
  c.metadata = std::move(metadata);
  return c;
}

Classifier Classifier::from_checkpoint(const nn::Checkpoint& ckpt) {
  require(ckpt.metadata.contains("encoder"), ErrorKind::kConfig, "checkpoint: metadata lacks the encoder config");
  require(ckpt.has_part("encoder"), ErrorKind::kConfig, "checkpoint: no encoder arrays");
  require(ckpt.has_part("head"), ErrorKind::kConfig, "checkpoint: no classification head");
  Classifier c(nn::EncoderConfig::from_json(ckpt.metadata.at("encoder")));
  nn::load_params(ckpt, c.encoder.params());
  nn::load_params(ckpt, c.head.params());
  return c;
}

// ---------------------------------------------------------------------------
// Schedules and stopping

double lr_schedule(double alpha, long long n, double gamma, double lambda) {
  require(alpha > 0.0, ErrorKind::kArgument, "lr_schedule: learning rate must be positive");
  require(n >= 0, ErrorKind::kArgument, "lr_schedule: epoch must be non-negative");
  return alpha * std::pow(1.0 + gamma * static_cast<double>(n), -lambda);
}

long double lr_schedule(long double alpha, long long n, long double gamma, long double lambda) {
  require(alpha > 0.0L, ErrorKind::kArgument, "lr_schedule: learning rate must be positive");
  require(n >= 0, ErrorKind::kArgument, "lr_schedule: epoch must be non-negative");
  return alpha * std::pow(1.0L + gamma * static_cast<long double>(n), -lambda);
}

EarlyStopper::EarlyStopper(EarlyStopMode mode, int patience) : mode_(mode), patience_(patience) {
  require(patience >= 1, ErrorKind::kConfig, "early stopping: patience must be >= 1");
}

bool EarlyStopper::update(double val_loss) {
  if (prev_ && val_loss > *prev_) {
    ++count_;
  } else if (prev_ && mode_ == EarlyStopMode::kConsecutive) {
    count_ = 0;
  }
  prev_ = val_loss;
  return count_ >= patience_;
}

// ---------------------------------------------------------------------------
// Configs

namespace {

const char* stop_mode_name(EarlyStopMode m) { return m == EarlyStopMode::kCumulative ? "cumulative" : "consecutive"; }

EarlyStopMode parse_stop_mode(const std::string& s) {
  if (s == "cumulative") return EarlyStopMode::kCumulative;
  if (s == "consecutive") return EarlyStopMode::kConsecutive;
  fail(ErrorKind::kConfig, "unknown early-stop mode '" + s + "'");
}

json augment_json(const preprocess::AugmentConfig& a) {
  return {{"noise_sd", a.noise_sd},
          {"intensity_scale_range", {a.intensity_scale_min, a.intensity_scale_max}},
          {"rotation_deg_range", {a.rotation_deg_min, a.rotation_deg_max}},
          {"size_scale_range", {a.size_scale_min, a.size_scale_max}},
          {"per_transform_probability", a.per_transform_probability}};
}

preprocess::AugmentConfig augment_from(const json& j, preprocess::AugmentConfig a) {
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    require(v.size() == 2, ErrorKind::kConfig, std::string("augment: ") + key + " needs two entries");
    lo = v[0];
    hi = v[1];
  };
  if (j.contains("noise_sd")) a.noise_sd = j.at("noise_sd").get<double>();
  range("intensity_scale_range", a.intensity_scale_min, a.intensity_scale_max);
  range("rotation_deg_range", a.rotation_deg_min, a.rotation_deg_max);
  range("size_scale_range", a.size_scale_min, a.size_scale_max);
  if (j.contains("per_transform_probability")) a.per_transform_probability = j.at("per_transform_probability").get<double>();
  a.validate();
  return a;
}

template <typename F>
auto config_guard(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string(what) + ": " + e.what());
  }
}

}  // namespace

SourceTrainConfig SourceTrainConfig::desk_scale() {
  SourceTrainConfig c;
  c.lr = 1e-3;
  c.max_epochs = 30;
  return c;
}

void SourceTrainConfig::validate() const {
  require(batch_size >= 1, ErrorKind::kConfig, "source training: batch_size must be >= 1");
  require(lr > 0.0 && weight_decay >= 0.0, ErrorKind::kConfig, "source training: rates must be positive");
  require(focal_gamma >= 0.0, ErrorKind::kConfig, "source training: focal gamma must be non-negative");
  require(patience >= 1, ErrorKind::kConfig, "source training: patience must be >= 1");
  require(max_epochs >= 1, ErrorKind::kConfig, "source training: max_epochs must be >= 1");
  require(baseline_val_fraction > 0.0 && baseline_val_fraction < 1.0, ErrorKind::kConfig,
          "source training: baseline_val_fraction must lie in (0, 1)");
  augment_cfg.validate();
  encoder.validate();
}

json SourceTrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"optimizer", "adam"},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"focal_gamma", focal_gamma},
          {"patience", patience},
          {"stop_mode", stop_mode_name(stop_mode)},
          {"max_epochs", max_epochs},
          {"seed", seed},
          {"augment", augment},
          {"augment_cfg", augment_json(augment_cfg)},
          {"encoder", encoder.to_json()},
          {"baseline_val_fraction", baseline_val_fraction},
          {"selection_metric", "val_auprc"}};
}

SourceTrainConfig SourceTrainConfig::from_json(const json& j) {
  return config_guard("source training config", [&] {
    SourceTrainConfig c;
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("focal_gamma")) c.focal_gamma = j.at("focal_gamma").get<double>();
    if (j.contains("patience")) c.patience = j.at("patience").get<int>();
    if (j.contains("stop_mode")) c.stop_mode = parse_stop_mode(j.at("stop_mode").get<std::string>());
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("augment")) c.augment = j.at("augment").get<bool>();
    if (j.contains("augment_cfg")) c.augment_cfg = augment_from(j.at("augment_cfg"), c.augment_cfg);
    if (j.contains("encoder")) c.encoder = nn::EncoderConfig::from_json(j.at("encoder"));
    if (j.contains("baseline_val_fraction")) c.baseline_val_fraction = j.at("baseline_val_fraction").get<double>();
    c.validate();
    return c;
  });
}

void AdaptConfig::validate() const {
  require(batch_size >= 1, ErrorKind::kConfig, "adaptation: batch_size must be >= 1");
  require(lr > 0.0 && weight_decay >= 0.0 && momentum >= 0.0, ErrorKind::kConfig, "adaptation: invalid optimizer settings");
  require(schedule_gamma >= 0.0 && schedule_lambda >= 0.0, ErrorKind::kConfig,
          "adaptation: schedule gamma and lambda must be non-negative");
  require(epochs >= 0, ErrorKind::kConfig, "adaptation: epochs must be non-negative");
  augment_cfg.validate();
}

json AdaptConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"optimizer", "sgd"},
          {"lr", lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"schedule_gamma", schedule_gamma},
          {"schedule_lambda", schedule_lambda},
          {"epochs", epochs},
          {"seed", seed},
          {"discriminator_hidden", discriminator_hidden},
          {"objective", objective == AdversarialObjective::kInvertedLabel ? "inverted_label" : "gradient_reversal"},
          {"augment", augment},
          {"augment_cfg", augment_json(augment_cfg)}};
}

AdaptConfig AdaptConfig::from_json(const json& j) {
  return config_guard("adaptation config", [&] {
    AdaptConfig c;
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("schedule_gamma")) c.schedule_gamma = j.at("schedule_gamma").get<double>();
    if (j.contains("schedule_lambda")) c.schedule_lambda = j.at("schedule_lambda").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("discriminator_hidden")) c.discriminator_hidden = j.at("discriminator_hidden").get<std::vector<int>>();
    if (j.contains("objective")) {
      const auto o = j.at("objective").get<std::string>();
      if (o == "inverted_label") c.objective = AdversarialObjective::kInvertedLabel;
      else if (o == "gradient_reversal") c.objective = AdversarialObjective::kGradientReversal;
      else fail(ErrorKind::kConfig, "unknown adversarial objective '" + o + "'");
    }
    if (j.contains("augment")) c.augment = j.at("augment").get<bool>();
    if (j.contains("augment_cfg")) c.augment_cfg = augment_from(j.at("augment_cfg"), c.augment_cfg);
    c.validate();
    return c;
  });
}

// ---------------------------------------------------------------------------
// Source training

namespace {

Grid3<float> maybe_augment(const Grid3<float>& v, bool enabled, const preprocess::AugmentConfig& cfg,
                           std::uint64_t seed) {
  if (!enabled) return v;
  Rng rng(seed);
  return preprocess::augment_voxels(v, cfg, rng);
}

struct ValStats {
  double loss = 0.0;
  double auprc = 0.0;
};

ValStats validate_model(const Classifier& m, const std::vector<LabeledVolume>& val, double gamma) {
  std::vector<const Grid3<float>*> vols;
  std::vector<int> labels;
  for (const auto& s : val) {
    vols.push_back(&s.voxels);
    labels.push_back(s.label);
  }
  const nn::Tensor logits = m.head.forward(encode_all(m.encoder, vols));
  ValStats st;
  std::vector<double> scores(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    st.loss += nn::focal_loss(logits.data[i], labels[i], gamma) / static_cast<double>(val.size());
    scores[i] = nn::sigmoid(logits.data[i]);
  }
  st.auprc = eval::average_precision(scores, labels);
  return st;
}

}  // namespace

SourceTrainResult train_source(const std::vector<LabeledVolume>& train, const std::vector<LabeledVolume>& val,
                               const SourceTrainConfig& cfg) {
  cfg.validate();
  require(!train.empty(), ErrorKind::kArgument, "train_source: empty training split");
  require(!val.empty(), ErrorKind::kArgument, "train_source: empty validation split");
  {
    int pos = 0;
    for (const auto& s : val) pos += s.label;
    require(pos > 0 && pos < static_cast<int>(val.size()), ErrorKind::kConfig,
            "train_source: validation set holds a single class, AUPRC is undefined");
  }
  for (const auto& s : train) {
    require(s.voxels.shape() == cfg.encoder.input_shape, ErrorKind::kArgument,
            "train_source: sample " + s.sample_id + " does not match the encoder input shape");
  }

  Classifier model(cfg.encoder);
  model.init(cfg.seed);
  nn::Adam opt(model.params(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  EarlyStopper stopper(cfg.stop_mode, cfg.patience);

  SourceTrainResult result{model, 0, -1.0, 0, {}, {}};
  double best_loss = 0.0;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(cfg.seed, "epoch-order", static_cast<std::uint64_t>(epoch)));
    shuffle(order, order_rng);
    const std::uint64_t aug_seed = derive_seed(cfg.seed, "augment", static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Grid3<float>> batch;
      std::vector<int> labels;
      for (std::size_t k = b; k < end; ++k) {
        const auto& s = train[order[k]];
        batch.push_back(maybe_augment(s.voxels, cfg.augment, cfg.augment_cfg, derive_seed(aug_seed, s.sample_id)));
        labels.push_back(s.label);
      }
      std::vector<const Grid3<float>*> ptrs;
      for (const auto& g : batch) ptrs.push_back(&g);
      opt.zero_grad();
      std::shared_ptr<nn::EncoderTrace> etrace;
      const nn::Tensor feat = model.encoder.forward(nn::make_batch(ptrs), &etrace);
      nn::Mlp::Trace htrace;
      const nn::Tensor logits = model.head.forward(feat, &htrace);
      const nn::BatchLoss loss = nn::focal_loss_batch(logits, labels, cfg.focal_gamma);
      const nn::Tensor dfeat = model.head.backward(htrace, loss.dlogits);
      model.encoder.backward(*etrace, dfeat);
      opt.step();
      loss_sum += loss.loss * static_cast<double>(end - b);
    }

    const ValStats vs = validate_model(model, val, cfg.focal_gamma);
    const bool stop = stopper.update(vs.loss);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()), vs.loss, vs.auprc, cfg.lr, stopper.increases()};
    result.trace.push_back(rec);
    result.epochs_run = epoch;
    if (vs.auprc > result.best_auprc || (vs.auprc == result.best_auprc && vs.loss < best_loss)) {
      result.best_auprc = vs.auprc;
      best_loss = vs.loss;
      result.best_epoch = epoch;
      result.model = model;
    }
    if (stop) break;
  }
  result.checkpoint = result.model.to_checkpoint({{"kind", "classifier"},
                                                  {"epoch", result.best_epoch},
                                                  {"selection_metric", {{"name", "val_auprc"}, {"value", result.best_auprc}}},
                                                  {"seed", cfg.seed},
                                                  {"train_config", cfg.to_json()}});
  return result;
}

SourceTrainResult train_nonuda_baseline(const std::vector<LabeledVolume>& labeled, const SourceTrainConfig& cfg) {
  cfg.validate();
  require(!labeled.empty(), ErrorKind::kArgument, "train_nonuda_baseline: empty label set");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labeled.size(); ++i) (labeled[i].label ? pos : neg).push_back(i);
  require(!pos.empty() && !neg.empty(), ErrorKind::kConfig,
          "train_nonuda_baseline: both classes are needed to form a validation set");
  Rng rng(derive_seed(cfg.seed, "baseline-split"));
  shuffle(pos, rng);
  shuffle(neg, rng);
  auto n_val = [&](std::size_t n) {
    const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.baseline_val_fraction));
    return std::clamp<std::size_t>(k, 1, n);
  };
  std::vector<bool> in_val(labeled.size(), false);
  for (std::size_t k = 0; k < n_val(pos.size()); ++k) in_val[pos[k]] = true;
  for (std::size_t k = 0; k < n_val(neg.size()); ++k) in_val[neg[k]] = true;
  std::vector<LabeledVolume> tr, va;
  for (std::size_t i = 0; i < labeled.size(); ++i) (in_val[i] ? va : tr).push_back(labeled[i]);
  require(!tr.empty(), ErrorKind::kArgument, "train_nonuda_baseline: no samples left for training");
  SourceTrainResult r = train_source(tr, va, cfg);
  r.checkpoint.metadata["kind"] = "nonuda_classifier";
  return r;
}

// ---------------------------------------------------------------------------
// Adversarial adaptation

namespace {

// Endless source order: a fresh permutation per pass, seeded by
// (seed, epoch, pass).
class SourceStream {
 public:
  SourceStream(std::size_t n, std::uint64_t seed, int epoch) : n_(n), seed_(derive_seed(seed, "source-stream", static_cast<std::uint64_t>(epoch))) {
    refill();
  }
  std::size_t next() {
    if (pos_ == order_.size()) refill();
    return order_[pos_++];
  }

 private:
  void refill() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed(seed_, pass_++));
    shuffle(order_, rng);
    pos_ = 0;
  }
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t pass_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

AdaptResult adapt_target(const Classifier& source, const std::vector<UnlabeledVolume>& source_samples,
                         const std::vector<UnlabeledVolume>& target_samples, const AdaptConfig& cfg,
                         const AdaptObserver& observer) {
  cfg.validate();
  require(!target_samples.empty(), ErrorKind::kArgument, "adapt_target: empty target set");
  require(!source_samples.empty(), ErrorKind::kArgument, "adapt_target: empty source set");
  const Shape3 in_shape = source.encoder.config().input_shape;
  for (const auto* set : {&source_samples, &target_samples}) {
    for (const auto& s : *set) {
      require(s.voxels.shape() == in_shape, ErrorKind::kArgument,
              "adapt_target: sample " + s.sample_id + " does not match the encoder input shape");
    }
  }

  const nn::Encoder& frozen = source.encoder;
  AdaptResult result{source, nn::build_discriminator(frozen.config().feature_dim(), cfg.discriminator_hidden), {}, {}};
  nn::Encoder& target = result.target.encoder;
  nn::Mlp& disc = result.discriminator;
  disc.init(derive_seed(cfg.seed, "discriminator"));

  nn::Sgd opt_d(disc.params(), {cfg.lr, cfg.momentum, cfg.weight_decay});
  nn::Sgd opt_e(target.params(), {cfg.lr, cfg.momentum, cfg.weight_decay});
  const nn::ParamList disc_params = disc.params();

  double lr = cfg.lr;
  std::vector<std::size_t> order(target_samples.size());
  std::uint64_t draw = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt_d.set_lr(lr);
    opt_e.set_lr(lr);
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(cfg.seed, "adapt-target-order", static_cast<std::uint64_t>(epoch)));
    shuffle(order, order_rng);
    SourceStream stream(source_samples.size(), cfg.seed, epoch);

    AdaptEpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    std::size_t correct = 0, seen = 0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size), ++steps) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t bs = end - b;
      std::vector<Grid3<float>> xs, xt;
      for (std::size_t k = 0; k < bs; ++k) {
        xs.push_back(maybe_augment(source_samples[stream.next()].voxels, cfg.augment, cfg.augment_cfg,
                                   derive_seed(cfg.seed, "adapt-augment", draw++)));
        xt.push_back(maybe_augment(target_samples[order[b + k]].voxels, cfg.augment, cfg.augment_cfg,
                                   derive_seed(cfg.seed, "adapt-augment", draw++)));
      }
      std::vector<const Grid3<float>*> ps, pt;
      for (std::size_t k = 0; k < bs; ++k) {
        ps.push_back(&xs[k]);
        pt.push_back(&xt[k]);
      }
      if (observer) observer(epoch, steps, frozen, target);

      const nn::Tensor fs = frozen.forward(nn::make_batch(ps));
      std::shared_ptr<nn::EncoderTrace> etrace;
      const nn::Tensor ft = target.forward(nn::make_batch(pt), &etrace);
      const std::vector<int> ones(bs, 1), zeros(bs, 0);

      // discriminator: source -> 1, target -> 0
      opt_d.zero_grad();
      nn::Mlp::Trace trs, trt;
      const nn::Tensor ls = disc.forward(fs, &trs);
      const nn::Tensor lt = disc.forward(ft, &trt);
      for (std::size_t k = 0; k < bs; ++k) {
        correct += (ls.data[k] >= 0.0f) + (lt.data[k] < 0.0f);
        seen += 2;
      }
      const nn::BatchLoss lds = nn::bce_batch(ls, ones);
      const nn::BatchLoss ldt = nn::bce_batch(lt, zeros);
      disc.backward(trs, lds.dlogits);
      const nn::Tensor dft_disc = disc.backward(trt, ldt.dlogits);
      rec.disc_loss += lds.loss + ldt.loss;

      if (cfg.objective == AdversarialObjective::kGradientReversal) {
        // encoder ascends the discriminator's target loss
        opt_e.zero_grad();
        nn::Tensor g = dft_disc;
        for (float& v : g.values()) v = -v;
        target.backward(*etrace, g);
        rec.encoder_loss += -ldt.loss;
        opt_d.step();
        opt_e.step();
        continue;
      }
      opt_d.step();

      // target encoder: fool the updated discriminator (target -> 1)
      opt_e.zero_grad();
      nn::Mlp::Trace tre;
      const nn::Tensor le = disc.forward(ft, &tre);
      const nn::BatchLoss lenc = nn::bce_batch(le, ones);
      const nn::Tensor dft = disc.backward(tre, lenc.dlogits);
      nn::zero_grads(disc_params);
      target.backward(*etrace, dft);
      opt_e.step();
      rec.encoder_loss += lenc.loss;
    }
    rec.disc_loss /= steps;
    rec.encoder_loss /= steps;
    rec.disc_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    result.trace.push_back(rec);
    lr = lr_schedule(lr, epoch, cfg.schedule_gamma, cfg.schedule_lambda);
  }

  json meta = {{"kind", "adapted"},
               {"epoch", cfg.epochs},
               {"seed", cfg.seed},
               {"adapt_config", cfg.to_json()},
               {"discriminator_hidden", cfg.discriminator_hidden}};
  result.checkpoint = result.target.to_checkpoint(meta);
  nn::add_params(result.checkpoint, std::as_const(disc).params());
  return result;
}

// ---------------------------------------------------------------------------
// Domain probe

double domain_probe_accuracy(const nn::Tensor& source_features, const nn::Tensor& target_features,
                             const ProbeConfig& cfg) {
  require(source_features.shape.size() == 2 && target_features.shape.size() == 2 &&
              source_features.shape[1] == target_features.shape[1],
          ErrorKind::kArgument, "domain probe: feature tensors must be [N, F] with equal F");
  const int f = source_features.shape[1];
  const std::size_t ns = static_cast<std::size_t>(source_features.shape[0]);
  const std::size_t nt = static_cast<std::size_t>(target_features.shape[0]);
  require(ns >= 2 && nt >= 2, ErrorKind::kArgument, "domain probe: need at least two samples per domain");

  struct Row {
    const float* x;
    int domain;  // 1 source, 0 target
  };
  std::vector<Row> train, test;
  Rng rng(derive_seed(cfg.seed, "probe-split"));
  for (int d : {1, 0}) {
    const nn::Tensor& t = d ? source_features : target_features;
    std::vector<std::size_t> idx(static_cast<std::size_t>(t.shape[0]));
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx, rng);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (k < idx.size() / 2 ? train : test).push_back({t.data.data() + idx[k] * static_cast<std::size_t>(f), d});
    }
  }

  auto pack = [&](const std::vector<Row>& rows) {
    nn::Tensor x({static_cast<int>(rows.size()), f});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (int c = 0; c < f; ++c) {
        x.data[i * static_cast<std::size_t>(f) + static_cast<std::size_t>(c)] =
            rows[i].x[c];
      }
    }
    return x;
  };
  const nn::Tensor xtr = pack(train), xte = pack(test);
  std::vector<int> ytr;
  for (const Row& r : train) ytr.push_back(r.domain);

  nn::Mlp probe = nn::build_discriminator(f, cfg.hidden);
  probe.init(derive_seed(cfg.seed, "probe-init"));
  nn::Adam opt(probe.params(), {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  for (int e = 0; e < cfg.epochs; ++e) {
    opt.zero_grad();
    nn::Mlp::Trace tr;
    const nn::Tensor logits = probe.forward(xtr, &tr);
    probe.backward(tr, nn::bce_batch(logits, ytr).dlogits);
    opt.step();
  }
  const nn::Tensor logits = probe.forward(xte);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += (logits.data[i] >= 0.0f) == (test[i].domain == 1);
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},         {"train_loss", r.train_loss}, {"val_loss", r.val_loss},
          {"val_auprc", r.val_auprc}, {"lr", r.lr},                 {"val_loss_increases", r.increases}};
}

json to_json(const AdaptEpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"disc_loss", r.disc_loss},
          {"encoder_loss", r.encoder_loss},
          {"disc_accuracy", r.disc_accuracy}};
}

}  // namespace uda::train
