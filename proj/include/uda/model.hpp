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

#ifndef UDA_MODEL_HPP_
#define UDA_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uda/layers.hpp"
#include "uda/tensor.hpp"
#include "uda/volume.hpp"

namespace uda::nn {

struct EncoderConfig {
  Shape3 input_shape{48, 48, 24};
  std::vector<int> block_layers{2, 2, 2};
  int growth_rate = 8;
  int initial_channels = 8;
  // Width multiplier of the 1x1 bottleneck inside each dense layer
  // (DenseNet-BC uses 4); 0 disables the bottleneck.
  int bottleneck_factor = 0;
  double compression = 0.5;
  int stem_kernel = 3;
  int stem_stride = 2;
  bool stem_pool = true;

  static EncoderConfig desk_scale();
  // Block layout (6, 12, 24, 16), growth 32, 64 stem channels, bottleneck 4.
  static EncoderConfig densenet121(Shape3 input_shape);

  int feature_dim() const;
  void validate() const;  // ErrorKind::kConfig

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

// Activations kept by a training forward pass.
struct EncoderTrace;

// Densely connected 3D CNN: stem conv (+max pool), dense blocks whose layers
// read the concatenation of every earlier output in the block, transition
// (1x1 conv + average pool) between blocks, ReLU and global average pooling.
// Dense layers are pre-activation (ReLU then conv); there is no batch
// normalization.
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& cfg);
  Encoder(const Encoder&);
  Encoder& operator=(const Encoder&);
  Encoder(Encoder&&) noexcept;
  Encoder& operator=(Encoder&&) noexcept;
  ~Encoder();

  void init(std::uint64_t seed);

  // x: [N, 1, Z, Y, X] matching input_shape. Returns [N, F]. When trace is
  // non-null the activations needed by backward() are stored in it.
  Tensor forward(const Tensor& x, std::shared_ptr<EncoderTrace>* trace = nullptr) const;
  // Accumulates parameter gradients for dL/dfeatures.
  void backward(const EncoderTrace& trace, const Tensor& dfeatures);

  ParamList params();
  ConstParamList params() const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Impl;
  EncoderConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

// Affine layers with leaky-ReLU between them; the last layer maps to one
// logit. hidden = {} gives the classification head (a single affine map).
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, int in_features, std::vector<int> hidden, double leaky_slope = 0.2);

  void init(std::uint64_t seed);

  struct Trace {
    std::vector<Tensor> inputs;  // input of each affine layer
    std::vector<Tensor> pre;     // pre-activation outputs of hidden layers
  };

  Tensor forward(const Tensor& x, Trace* trace = nullptr) const;  // [N, F] -> [N, 1]
  // Accumulates parameter gradients; returns dL/dx.
  Tensor backward(const Trace& trace, const Tensor& dlogits);

  ParamList params();
  ConstParamList params() const;
  int in_features() const { return in_; }
  const std::vector<int>& hidden() const { return hidden_; }
  double leaky_slope() const { return slope_; }

 private:
  std::string name_;
  int in_ = 0;
  std::vector<int> hidden_;
  double slope_ = 0.2;
  std::vector<Linear> layers_;
};

Mlp build_head(int feature_dim);
Mlp build_discriminator(int feature_dim, std::vector<int> hidden = {256, 128});

// Packs volumes into a [N, 1, Z, Y, X] batch.
Tensor make_batch(std::span<const Grid3<float>* const> volumes);

// Focal loss on one logit: -(1-p_t)^gamma * log(max(p_t, 1e-12)).
double focal_loss(double logit, int label, double gamma);
double focal_loss_grad(double logit, int label, double gamma);

// -log sigma(z) for label 1, -log(1-sigma(z)) for label 0.
double bce_with_logits(double logit, int label);
double bce_with_logits_grad(double logit, int label);

double sigmoid(double z);

struct BatchLoss {
  double loss = 0.0;
  Tensor dlogits;  // [N, 1], gradient of the batch mean
};
BatchLoss focal_loss_batch(const Tensor& logits, std::span<const int> labels, double gamma);
BatchLoss bce_batch(const Tensor& logits, std::span<const int> labels);

// Named arrays + metadata. Names are prefixed by part: "encoder.", "head.",
// "discriminator.".
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> arrays;
  nlohmann::json metadata = nlohmann::json::object();

  const Tensor* find(const std::string& name) const;
  // True if any array is named "<part>.*".
  bool has_part(const std::string& part) const;
};

void add_params(Checkpoint& ckpt, const ConstParamList& params);
// Copies every parameter from the checkpoint; throws ErrorKind::kConfig on
// missing names or shape mismatches.
void load_params(const Checkpoint& ckpt, const ParamList& params);

// Directory layout: checkpoint.json (names, shapes, dtypes, metadata) and
// one little-endian float32 blob per array.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace uda::nn

#endif  // UDA_MODEL_HPP_
