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

#ifndef UDA_TRAINING_HPP_
#define UDA_TRAINING_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "uda/model.hpp"
#include "uda/optim.hpp"
#include "uda/preprocess.hpp"

namespace uda::train {

// Encoder plus classification head.
struct Classifier {
  nn::Encoder encoder;
  nn::Mlp head;

  explicit Classifier(const nn::EncoderConfig& cfg);

  void init(std::uint64_t seed);
  // Sigmoid probabilities, evaluated in batches without augmentation.
  std::vector<double> predict(const std::vector<const Grid3<float>*>& volumes) const;
  nn::ParamList params();

  nn::Checkpoint to_checkpoint(nlohmann::json metadata) const;
  // Requires encoder.* and head.* arrays and an "encoder" config entry in
  // the metadata.
  static Classifier from_checkpoint(const nn::Checkpoint& ckpt);
};

// Encoder features for many volumes, batched.
nn::Tensor encode_all(const nn::Encoder& enc, const std::vector<const Grid3<float>*>& volumes, int batch = 8);

struct LabeledVolume {
  std::string sample_id;
  Grid3<float> voxels;
  int label = 0;
};

// alpha * (1 + gamma * n)^(-lambda): the rate for epoch n + 1 given the
// rate alpha used in epoch n.
double lr_schedule(double alpha, long long n, double gamma, double lambda);
// Extended-range variant: iterating the schedule for thousands of epochs
// drives the rate below the smallest double.
long double lr_schedule(long double alpha, long long n, long double gamma, long double lambda);

enum class EarlyStopMode { kCumulative, kConsecutive };

// Counts validation-loss increases over the previous epoch; stops once the
// count reaches `patience`. Consecutive mode resets the count whenever the
// loss does not increase.
class EarlyStopper {
 public:
  EarlyStopper(EarlyStopMode mode, int patience);
  // Returns true when training should stop after this epoch.
  bool update(double val_loss);
  int increases() const { return count_; }

 private:
  EarlyStopMode mode_;
  int patience_;
  int count_ = 0;
  std::optional<double> prev_;
};

struct SourceTrainConfig {
  int batch_size = 2;
  double lr = 1e-6;
  double weight_decay = 1e-3;
  double focal_gamma = 1.0;
  int patience = 3;
  EarlyStopMode stop_mode = EarlyStopMode::kCumulative;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  bool augment = true;
  preprocess::AugmentConfig augment_cfg;
  nn::EncoderConfig encoder;
  // Validation share used when the non-UDA baseline splits its labeled set.
  double baseline_val_fraction = 0.125;

  // Hyper-parameters for CPU-sized runs on 48x48x24 inputs.
  static SourceTrainConfig desk_scale();
  void validate() const;
  nlohmann::json to_json() const;
  static SourceTrainConfig from_json(const nlohmann::json& j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auprc = 0.0;
  double lr = 0.0;
  int increases = 0;
};

struct SourceTrainResult {
  Classifier model;
  int best_epoch = 0;
  double best_auprc = 0.0;
  int epochs_run = 0;
  std::vector<EpochRecord> trace;
  nn::Checkpoint checkpoint;
};

// Focal-loss training with Adam; keeps the epoch with the highest
// validation AUPRC. Throws kArgument for empty splits and kConfig when the
// validation set holds a single class.
SourceTrainResult train_source(const std::vector<LabeledVolume>& train, const std::vector<LabeledVolume>& val,
                               const SourceTrainConfig& cfg);

// Same procedure on labeled target data; the labeled set is split
// internally (stratified, seeded) into training and validation parts with
// at least one sample of each class in validation.
SourceTrainResult train_nonuda_baseline(const std::vector<LabeledVolume>& labeled, const SourceTrainConfig& cfg);

enum class AdversarialObjective { kInvertedLabel, kGradientReversal };

struct AdaptConfig {
  int batch_size = 2;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double schedule_gamma = 0.0003;
  double schedule_lambda = 0.75;
  int epochs = 50;
  std::uint64_t seed = 0;
  std::vector<int> discriminator_hidden{256, 128};
  AdversarialObjective objective = AdversarialObjective::kInvertedLabel;
  bool augment = true;
  preprocess::AugmentConfig augment_cfg;

  void validate() const;
  nlohmann::json to_json() const;
  static AdaptConfig from_json(const nlohmann::json& j);
};

struct AdaptEpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double disc_loss = 0.0;
  double encoder_loss = 0.0;
  double disc_accuracy = 0.0;  // on the training minibatches, before each step
};

struct AdaptResult {
  Classifier target;  // adapted encoder + source head
  nn::Mlp discriminator;
  std::vector<AdaptEpochRecord> trace;
  nn::Checkpoint checkpoint;
};

// Called before every optimization step with the frozen source encoder and
// the current target encoder.
using AdaptObserver = std::function<void(int epoch, int step, const nn::Encoder& source, const nn::Encoder& target)>;

// Adversarial adaptation: the target encoder starts as a copy of the frozen
// source encoder; per minibatch the discriminator is stepped on
// source-vs-target features, then the target encoder is stepped on the
// inverted-label objective. One epoch is one pass over the target set;
// source samples come from a stream reshuffled per epoch. The returned
// model is the last epoch's.
AdaptResult adapt_target(const Classifier& source, const std::vector<UnlabeledVolume>& source_samples,
                         const std::vector<UnlabeledVolume>& target_samples, const AdaptConfig& cfg,
                         const AdaptObserver& observer = {});

// Held-out domain discrimination: a freshly initialized discriminator is
// trained on half of each feature set and scored on the other half. Returns the
// held-out accuracy.
struct ProbeConfig {
  std::vector<int> hidden{256, 128};
  int epochs = 200;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};
double domain_probe_accuracy(const nn::Tensor& source_features, const nn::Tensor& target_features,
                             const ProbeConfig& cfg);

nlohmann::json to_json(const EpochRecord& r);
nlohmann::json to_json(const AdaptEpochRecord& r);

}  // namespace uda::train

#endif  // UDA_TRAINING_HPP_
