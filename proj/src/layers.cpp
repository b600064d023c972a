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

#include "uda/layers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "uda/error.hpp"

namespace uda::nn {

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void zero_grads(const ParamList& params) {
  for (Param* p : params) p->grad.zero();
}

namespace {

// Output index range [lo, hi] whose input index o*s - p + k lies in [0, n).
void valid_range(int n_in, int n_out, int s, int p, int k, int& lo, int& hi) {
  // o*s >= p - k
  const int a = p - k;
  lo = a <= 0 ? 0 : (a + s - 1) / s;
  // o*s <= n_in - 1 + p - k
  const int b = n_in - 1 + p - k;
  hi = b < 0 ? -1 : std::min(n_out - 1, b / s);
}

}  // namespace

Conv3d::Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding)
    : in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {
  require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && padding >= 0, ErrorKind::kConfig,
          "conv3d " + name + ": invalid geometry");
}

Dims3 Conv3d::output_dims(Dims3 in) const {
  auto o = [&](int n) { return (n + 2 * pad_ - k_) / stride_ + 1; };
  return {o(in.d), o(in.h), o(in.w)};
}

void Conv3d::init(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(in_) * k_ * k_ * k_;
  const double bound = gain * std::sqrt(3.0 / fan_in);
  for (float& w : weight_.value.values()) w = static_cast<float>(uniform(rng, -bound, bound));
  bias_.value.zero();
}

void Conv3d::forward(int batch, ConstVolView x, VolView y) const {
  const Dims3 in = x.dims, out = y.dims;
  const int k3 = k_ * k_ * k_;
  const std::size_t plane_out = static_cast<std::size_t>(out.h) * out.w;
  const std::size_t plane_in = static_cast<std::size_t>(in.h) * in.w;
  const float* w = weight_.value.ptr();
  const float* b = bias_.value.ptr();
  for (int n = 0; n < batch; ++n) {
    for (int co = 0; co < out_; ++co) {
      float* __restrict yp = y.channel(n, co);
      std::fill(yp, yp + out.volume(), b[co]);
      for (int ci = 0; ci < in_; ++ci) {
        const float* __restrict xp = x.channel(n, ci);
        const float* wp = w + (static_cast<std::size_t>(co) * in_ + ci) * k3;
        for (int kz = 0; kz < k_; ++kz) {
          int oz0, oz1;
          valid_range(in.d, out.d, stride_, pad_, kz, oz0, oz1);
          for (int ky = 0; ky < k_; ++ky) {
            int oy0, oy1;
            valid_range(in.h, out.h, stride_, pad_, ky, oy0, oy1);
            for (int kx = 0; kx < k_; ++kx) {
              int ox0, ox1;
              valid_range(in.w, out.w, stride_, pad_, kx, ox0, ox1);
              const float wv = wp[(kz * k_ + ky) * k_ + kx];
              for (int oz = oz0; oz <= oz1; ++oz) {
                const int iz = oz * stride_ - pad_ + kz;
                for (int oy = oy0; oy <= oy1; ++oy) {
                  const int iy = oy * stride_ - pad_ + ky;
                  float* __restrict yr = yp + oz * plane_out + static_cast<std::size_t>(oy) * out.w;
                  const float* __restrict xr = xp + iz * plane_in + static_cast<std::size_t>(iy) * in.w;
                  const int off = -pad_ + kx;
                  if (stride_ == 1) {
                    for (int ox = ox0; ox <= ox1; ++ox) yr[ox] += wv * xr[ox + off];
                  } else {
                    for (int ox = ox0; ox <= ox1; ++ox) yr[ox] += wv * xr[ox * stride_ + off];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

void Conv3d::backward(int batch, ConstVolView x, ConstVolView dy, VolView dx) {
  const Dims3 in = x.dims, out = dy.dims;
  const int k3 = k_ * k_ * k_;
  const std::size_t plane_out = static_cast<std::size_t>(out.h) * out.w;
  const std::size_t plane_in = static_cast<std::size_t>(in.h) * in.w;
  const float* w = weight_.value.ptr();
  float* gw = weight_.grad.ptr();
  float* gb = bias_.grad.ptr();
  std::vector<double> wacc(static_cast<std::size_t>(k3));
  for (int n = 0; n < batch; ++n) {
    for (int co = 0; co < out_; ++co) {
      const float* __restrict dyp = dy.channel(n, co);
      double bsum = 0.0;
      for (std::size_t i = 0; i < out.volume(); ++i) bsum += dyp[i];
      gb[co] += static_cast<float>(bsum);
      for (int ci = 0; ci < in_; ++ci) {
        const float* __restrict xp = x.channel(n, ci);
        float* __restrict dxp = dx.base ? dx.channel(n, ci) : nullptr;
        const float* wp = w + (static_cast<std::size_t>(co) * in_ + ci) * k3;
        std::fill(wacc.begin(), wacc.end(), 0.0);
        for (int kz = 0; kz < k_; ++kz) {
          int oz0, oz1;
          valid_range(in.d, out.d, stride_, pad_, kz, oz0, oz1);
          for (int ky = 0; ky < k_; ++ky) {
            int oy0, oy1;
            valid_range(in.h, out.h, stride_, pad_, ky, oy0, oy1);
            for (int kx = 0; kx < k_; ++kx) {
              int ox0, ox1;
              valid_range(in.w, out.w, stride_, pad_, kx, ox0, ox1);
              const int kidx = (kz * k_ + ky) * k_ + kx;
              const float wv = wp[kidx];
              const int off = -pad_ + kx;
              double acc = 0.0;
              for (int oz = oz0; oz <= oz1; ++oz) {
                const int iz = oz * stride_ - pad_ + kz;
                for (int oy = oy0; oy <= oy1; ++oy) {
                  const int iy = oy * stride_ - pad_ + ky;
                  const float* __restrict dr = dyp + oz * plane_out + static_cast<std::size_t>(oy) * out.w;
                  const std::size_t xrow = iz * plane_in + static_cast<std::size_t>(iy) * in.w;
                  const float* __restrict xr = xp + xrow;
                  float row = 0.0f;
                  if (stride_ == 1) {
                    for (int ox = ox0; ox <= ox1; ++ox) row += dr[ox] * xr[ox + off];
                    if (dxp) {
                      float* __restrict dxr = dxp + xrow;
                      for (int ox = ox0; ox <= ox1; ++ox) dxr[ox + off] += wv * dr[ox];
                    }
                  } else {
                    for (int ox = ox0; ox <= ox1; ++ox) row += dr[ox] * xr[ox * stride_ + off];
                    if (dxp) {
                      float* __restrict dxr = dxp + xrow;
                      for (int ox = ox0; ox <= ox1; ++ox) dxr[ox * stride_ + off] += wv * dr[ox];
                    }
                  }
                  acc += row;
                }
              }
              wacc[static_cast<std::size_t>(kidx)] += acc;
            }
          }
        }
        float* gwp = gw + (static_cast<std::size_t>(co) * in_ + ci) * k3;
        for (int i = 0; i < k3; ++i) gwp[i] += static_cast<float>(wacc[static_cast<std::size_t>(i)]);
      }
    }
  }
}

Linear::Linear(std::string name, int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {
  require(in_features > 0 && out_features > 0, ErrorKind::kConfig, "linear " + name + ": invalid shape");
}

void Linear::init(Rng& rng, double gain) {
  const double bound = gain * std::sqrt(3.0 / in_);
  for (float& w : weight_.value.values()) w = static_cast<float>(uniform(rng, -bound, bound));
  bias_.value.zero();
}

Tensor Linear::forward(const Tensor& x) const {
  require(x.shape.size() == 2 && x.dim(1) == in_, ErrorKind::kArgument,
          weight_.name + ": expected input [N," + std::to_string(in_) + "], got " + x.shape_string());
  const int n = x.dim(0);
  Tensor y({n, out_});
  for (int i = 0; i < n; ++i) {
    const float* xr = x.ptr() + static_cast<std::size_t>(i) * in_;
    for (int o = 0; o < out_; ++o) {
      const float* wr = weight_.value.ptr() + static_cast<std::size_t>(o) * in_;
      double acc = bias_.value.data[static_cast<std::size_t>(o)];
      for (int j = 0; j < in_; ++j) acc += static_cast<double>(wr[j]) * xr[j];
      y.data[static_cast<std::size_t>(i) * out_ + o] = static_cast<float>(acc);
    }
  }
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy) {
  const int n = x.dim(0);
  Tensor dx({n, in_});
  for (int i = 0; i < n; ++i) {
    const float* xr = x.ptr() + static_cast<std::size_t>(i) * in_;
    float* dxr = dx.ptr() + static_cast<std::size_t>(i) * in_;
    for (int o = 0; o < out_; ++o) {
      const float g = dy.data[static_cast<std::size_t>(i) * out_ + o];
      bias_.grad.data[static_cast<std::size_t>(o)] += g;
      float* gw = weight_.grad.ptr() + static_cast<std::size_t>(o) * in_;
      const float* wr = weight_.value.ptr() + static_cast<std::size_t>(o) * in_;
      for (int j = 0; j < in_; ++j) {
        gw[j] += g * xr[j];
        dxr[j] += g * wr[j];
      }
    }
  }
  return dx;
}

Dims3 pool_dims(Dims3 in) {
  auto p = [](int n) { return n >= 2 ? n / 2 : n; };
  return {p(in.d), p(in.h), p(in.w)};
}

namespace {

template <typename Fn>
void for_each_window(Dims3 in, Dims3 out, Fn&& fn) {
  const int kd = in.d >= 2 ? 2 : 1, kh = in.h >= 2 ? 2 : 1, kw = in.w >= 2 ? 2 : 1;
  std::size_t o = 0;
  for (int z = 0; z < out.d; ++z) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x, ++o) {
        std::uint32_t offs[8];
        int n = 0;
        for (int dz = 0; dz < kd; ++dz) {
          for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
              offs[n++] = static_cast<std::uint32_t>(((z * kd + dz) * in.h + (y * kh + dy)) * in.w + (x * kw + dx));
            }
          }
        }
        fn(o, offs, n);
      }
    }
  }
}

}  // namespace

void max_pool_forward(int batch, ConstVolView x, VolView y, std::vector<std::uint32_t>& argmax) {
  const std::size_t vol_out = y.dims.volume();
  argmax.assign(static_cast<std::size_t>(batch) * x.channels * vol_out, 0);
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < x.channels; ++c) {
      const float* xp = x.channel(n, c);
      float* yp = y.channel(n, c);
      std::uint32_t* am = argmax.data() + (static_cast<std::size_t>(n) * x.channels + c) * vol_out;
      for_each_window(x.dims, y.dims, [&](std::size_t o, const std::uint32_t* offs, int k) {
        std::uint32_t best = offs[0];
        for (int i = 1; i < k; ++i) {
          if (xp[offs[i]] > xp[best]) best = offs[i];
        }
        yp[o] = xp[best];
        am[o] = best;
      });
    }
  }
}

void max_pool_backward(int batch, const std::vector<std::uint32_t>& argmax, ConstVolView dy, VolView dx) {
  const std::size_t vol_out = dy.dims.volume();
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < dy.channels; ++c) {
      const float* dyp = dy.channel(n, c);
      float* dxp = dx.channel(n, c);
      const std::uint32_t* am = argmax.data() + (static_cast<std::size_t>(n) * dy.channels + c) * vol_out;
      for (std::size_t o = 0; o < vol_out; ++o) dxp[am[o]] += dyp[o];
    }
  }
}

void avg_pool_forward(int batch, ConstVolView x, VolView y) {
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < x.channels; ++c) {
      const float* xp = x.channel(n, c);
      float* yp = y.channel(n, c);
      for_each_window(x.dims, y.dims, [&](std::size_t o, const std::uint32_t* offs, int k) {
        float s = 0.0f;
        for (int i = 0; i < k; ++i) s += xp[offs[i]];
        yp[o] = s / static_cast<float>(k);
      });
    }
  }
}

void avg_pool_backward(int batch, ConstVolView dy, VolView dx) {
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < dy.channels; ++c) {
      const float* dyp = dy.channel(n, c);
      float* dxp = dx.channel(n, c);
      for_each_window(dx.dims, dy.dims, [&](std::size_t o, const std::uint32_t* offs, int k) {
        const float g = dyp[o] / static_cast<float>(k);
        for (int i = 0; i < k; ++i) dxp[offs[i]] += g;
      });
    }
  }
}

}  // namespace uda::nn
