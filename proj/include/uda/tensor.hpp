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

#ifndef UDA_TENSOR_HPP_
#define UDA_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace uda::nn {

// Row-major float tensor. Volumes are [N, C, Z, Y, X], features [N, F].
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, float fill = 0.0f) : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }
  std::span<float> values() { return data; }
  std::span<const float> values() const { return data; }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  void zero() { std::fill(data.begin(), data.end(), 0.0f); }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Trainable array plus its accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
};

using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

void zero_grads(const ParamList& params);

}  // namespace uda::nn

#endif  // UDA_TENSOR_HPP_
