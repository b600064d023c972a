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

#ifndef UDA_LAYERS_HPP_
#define UDA_LAYERS_HPP_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "uda/random.hpp"
#include "uda/tensor.hpp"

namespace uda::nn {

struct Dims3 {
  int d = 1;  // z
  int h = 1;  // y
  int w = 1;  // x

  std::size_t volume() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

// Strided view of a batch of multi-channel volumes. Sample n, channel c
// starts at base + n * batch_stride + c * dims.volume(). Channel prefixes of
// a larger buffer are expressed by a batch_stride larger than
// channels * volume.
struct VolView {
  float* base = nullptr;
  std::size_t batch_stride = 0;
  int channels = 0;
  Dims3 dims;

  float* channel(int n, int c) const {
    return base + static_cast<std::size_t>(n) * batch_stride + static_cast<std::size_t>(c) * dims.volume();
  }
};

struct ConstVolView {
  const float* base = nullptr;
  std::size_t batch_stride = 0;
  int channels = 0;
  Dims3 dims;

  ConstVolView() = default;
  ConstVolView(const float* b, std::size_t s, int c, Dims3 d) : base(b), batch_stride(s), channels(c), dims(d) {}
  ConstVolView(const VolView& v) : base(v.base), batch_stride(v.batch_stride), channels(v.channels), dims(v.dims) {}  // NOLINT

  const float* channel(int n, int c) const {
    return base + static_cast<std::size_t>(n) * batch_stride + static_cast<std::size_t>(c) * dims.volume();
  }
};

// Dense 3D convolution, cubic kernel, zero padding.
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding);

  Dims3 output_dims(Dims3 in) const;
  // Fan-in scaled uniform weights, zero bias.
  void init(Rng& rng, double gain);

  void forward(int batch, ConstVolView x, VolView y) const;
  // Accumulates weight/bias gradients; adds the input gradient into dx when
  // dx.base is non-null.
  void backward(int batch, ConstVolView x, ConstVolView dy, VolView dx);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  Param weight_;  // [out, in, k, k, k]
  Param bias_;    // [out]
};

// y = W x + b over rows of a [N, in] tensor.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features);

  void init(Rng& rng, double gain);
  Tensor forward(const Tensor& x) const;
  // Accumulates parameter gradients; returns dL/dx.
  Tensor backward(const Tensor& x, const Tensor& dy);

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  int in_ = 0;
  int out_ = 0;
  Param weight_;  // [out, in]
  Param bias_;    // [out]
};

// Window-2 / stride-2 pooling over axes of extent >= 2 (extent-1 axes pass
// through); odd extents drop the last plane.
Dims3 pool_dims(Dims3 in);
// argmax receives, per output element, the flat in-channel offset it came from.
void max_pool_forward(int batch, ConstVolView x, VolView y, std::vector<std::uint32_t>& argmax);
void max_pool_backward(int batch, const std::vector<std::uint32_t>& argmax, ConstVolView dy, VolView dx);
void avg_pool_forward(int batch, ConstVolView x, VolView y);
void avg_pool_backward(int batch, ConstVolView dy, VolView dx);

}  // namespace uda::nn

#endif  // UDA_LAYERS_HPP_
