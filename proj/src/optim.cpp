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

#include "uda/optim.hpp"

#include <cmath>

#include "uda/error.hpp"

namespace uda::nn {

Adam::Adam(ParamList params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  require(opts_.lr > 0 && opts_.weight_decay >= 0 && opts_.eps > 0, ErrorKind::kConfig, "adam: invalid options");
  for (Param* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad.data[i]) + opts_.weight_decay * p.value.data[i];
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value.data[i] = static_cast<float>(p.value.data[i] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
    }
  }
}

Sgd::Sgd(ParamList params, SgdOptions opts) : params_(std::move(params)), opts_(opts) {
  require(opts_.lr > 0 && opts_.weight_decay >= 0 && opts_.momentum >= 0, ErrorKind::kConfig, "sgd: invalid options");
  for (Param* p : params_) buf_.emplace_back(p->value.size(), 0.0f);
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    auto& b = buf_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float w = p.value.data[i];
      const float g = p.grad.data[i] + static_cast<float>(opts_.weight_decay) * w;
      b[i] = started_ ? static_cast<float>(opts_.momentum) * b[i] + g : g;
      p.value.data[i] = w - static_cast<float>(opts_.lr) * b[i];
    }
  }
  started_ = true;
}

}  // namespace uda::nn
