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

#ifndef UDA_OPTIM_HPP_
#define UDA_OPTIM_HPP_

#include <vector>

#include "uda/tensor.hpp"

namespace uda::nn {

// Both optimizers use coupled L2 weight decay: the step sees
// g + weight_decay * w. With zero gradient a plain SGD step therefore
// scales every weight by exactly (1 - lr * weight_decay).

struct AdamOptions {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

class Adam {
 public:
  Adam(ParamList params, AdamOptions opts);
  void step();
  void zero_grad() { zero_grads(params_); }
  const AdamOptions& options() const { return opts_; }

 private:
  ParamList params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long long t_ = 0;
};

struct SgdOptions {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-3;
};

// Heavy-ball momentum; the buffer starts at the first gradient.
class Sgd {
 public:
  Sgd(ParamList params, SgdOptions opts);
  void step();
  void zero_grad() { zero_grads(params_); }
  void set_lr(double lr) { opts_.lr = lr; }
  double lr() const { return opts_.lr; }

 private:
  ParamList params_;
  SgdOptions opts_;
  std::vector<std::vector<float>> buf_;
  bool started_ = false;
};

}  // namespace uda::nn

#endif  // UDA_OPTIM_HPP_
