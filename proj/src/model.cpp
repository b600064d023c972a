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

#include "uda/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "uda/error.hpp"
#include "uda/random.hpp"
#include "uda/volume_io.hpp"

namespace uda::nn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// EncoderConfig

EncoderConfig EncoderConfig::desk_scale() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::densenet121(Shape3 input_shape) {
  EncoderConfig c;
  c.input_shape = input_shape;
  c.block_layers = {6, 12, 24, 16};
  c.growth_rate = 32;
  c.initial_channels = 64;
  c.bottleneck_factor = 4;
  c.stem_kernel = 7;
  return c;
}

int EncoderConfig::feature_dim() const {
  int c = initial_channels;
  for (std::size_t b = 0; b < block_layers.size(); ++b) {
    c += block_layers[b] * growth_rate;
    if (b + 1 < block_layers.size()) c = static_cast<int>(std::floor(c * compression));
  }
  return c;
}

void EncoderConfig::validate() const {
  require(input_shape.positive(), ErrorKind::kConfig, "encoder: input shape must be positive");
  require(!block_layers.empty(), ErrorKind::kConfig, "encoder: need at least one dense block");
  for (int l : block_layers) require(l > 0, ErrorKind::kConfig, "encoder: block sizes must be positive");
  require(growth_rate > 0 && initial_channels > 0, ErrorKind::kConfig,
          "encoder: growth rate and initial channels must be positive");
  require(bottleneck_factor >= 0, ErrorKind::kConfig, "encoder: bottleneck factor must be non-negative");
  require(compression > 0.0 && compression <= 1.0, ErrorKind::kConfig, "encoder: compression must lie in (0, 1]");
  require(stem_kernel > 0 && stem_kernel % 2 == 1 && stem_stride > 0, ErrorKind::kConfig,
          "encoder: stem kernel must be odd and positive");
  int c = initial_channels;
  for (std::size_t b = 0; b + 1 < block_layers.size(); ++b) {
    c = static_cast<int>(std::floor((c + block_layers[b] * growth_rate) * compression));
    require(c > 0, ErrorKind::kConfig, "encoder: compression leaves a transition without channels");
  }
}

json EncoderConfig::to_json() const {
  return {
      {"input_shape", {input_shape.x, input_shape.y, input_shape.z}},
      {"block_layers", block_layers},
      {"growth_rate", growth_rate},
      {"initial_channels", initial_channels},
      {"bottleneck_factor", bottleneck_factor},
      {"compression", compression},
      {"stem_kernel", stem_kernel},
      {"stem_stride", stem_stride},
      {"stem_pool", stem_pool},
  };
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  try {
    if (j.contains("input_shape")) {
      const auto s = j.at("input_shape").get<std::vector<int>>();
      require(s.size() == 3, ErrorKind::kConfig, "encoder: input_shape needs 3 entries");
      c.input_shape = {s[0], s[1], s[2]};
    }
    if (j.contains("block_layers")) c.block_layers = j.at("block_layers").get<std::vector<int>>();
    if (j.contains("growth_rate")) c.growth_rate = j.at("growth_rate").get<int>();
    if (j.contains("initial_channels")) c.initial_channels = j.at("initial_channels").get<int>();
    if (j.contains("bottleneck_factor")) c.bottleneck_factor = j.at("bottleneck_factor").get<int>();
    if (j.contains("compression")) c.compression = j.at("compression").get<double>();
    if (j.contains("stem_kernel")) c.stem_kernel = j.at("stem_kernel").get<int>();
    if (j.contains("stem_stride")) c.stem_stride = j.at("stem_stride").get<int>();
    if (j.contains("stem_pool")) c.stem_pool = j.at("stem_pool").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

void relu_into(const float* in, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
}

// out = g where x > 0, else 0
void relu_grad_into(const float* g, const float* x, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? g[i] : 0.0f;
}

Dims3 dims_of(const Shape3& s) { return {s.z, s.y, s.x}; }

VolView view(Tensor& t, int c0, int channels, Dims3 dims, int total_channels) {
  return {t.ptr() + static_cast<std::size_t>(c0) * dims.volume(), static_cast<std::size_t>(total_channels) * dims.volume(),
          channels, dims};
}

ConstVolView cview(const Tensor& t, int c0, int channels, Dims3 dims, int total_channels) {
  return {t.ptr() + static_cast<std::size_t>(c0) * dims.volume(), static_cast<std::size_t>(total_channels) * dims.volume(),
          channels, dims};
}

}  // namespace

struct DenseLayer {
  bool bottleneck = false;
  Conv3d reduce;  // 1x1, only with bottleneck
  Conv3d conv;    // 3x3x3
};

struct DenseBlock {
  int in_channels = 0;
  int out_channels = 0;  // in + layers * growth
  std::vector<DenseLayer> layers;
  bool has_transition = false;
  Conv3d transition;
};

struct Encoder::Impl {
  Conv3d stem;
  std::vector<DenseBlock> blocks;
};

struct EncoderTrace {
  int batch = 0;
  Tensor input;
  Dims3 stem_dims;
  Tensor stem_out;  // pre-activation
  Tensor stem_act;
  std::vector<std::uint32_t> pool_argmax;
  struct Block {
    Dims3 dims;
    Tensor features;     // F: block input + every layer output, pre-activation
    Tensor activations;  // relu(F)
    std::vector<Tensor> reduce_out;  // per layer, bottleneck only
    std::vector<Tensor> reduce_act;
    Tensor transition_out;
  };
  std::vector<Block> blocks;
};

Encoder::Encoder(const EncoderConfig& cfg) : cfg_(cfg), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  const int pad = cfg_.stem_kernel / 2;
  impl_->stem = Conv3d("encoder.stem", 1, cfg_.initial_channels, cfg_.stem_kernel, cfg_.stem_stride, pad);
  int c = cfg_.initial_channels;
  const int g = cfg_.growth_rate;
  for (std::size_t b = 0; b < cfg_.block_layers.size(); ++b) {
    DenseBlock blk;
    blk.in_channels = c;
    const std::string prefix = "encoder.block" + std::to_string(b);
    for (int l = 0; l < cfg_.block_layers[b]; ++l) {
      DenseLayer layer;
      const std::string lname = prefix + ".layer" + std::to_string(l);
      const int cin = c + l * g;
      if (cfg_.bottleneck_factor > 0) {
        layer.bottleneck = true;
        layer.reduce = Conv3d(lname + ".reduce", cin, cfg_.bottleneck_factor * g, 1, 1, 0);
        layer.conv = Conv3d(lname + ".conv", cfg_.bottleneck_factor * g, g, 3, 1, 1);
      } else {
        layer.conv = Conv3d(lname + ".conv", cin, g, 3, 1, 1);
      }
      blk.layers.push_back(std::move(layer));
    }
    blk.out_channels = c + cfg_.block_layers[b] * g;
    if (b + 1 < cfg_.block_layers.size()) {
      blk.has_transition = true;
      const int ct = static_cast<int>(std::floor(blk.out_channels * cfg_.compression));
      blk.transition = Conv3d("encoder.transition" + std::to_string(b), blk.out_channels, ct, 1, 1, 0);
      c = ct;
    } else {
      c = blk.out_channels;
    }
    impl_->blocks.push_back(std::move(blk));
  }
}

Encoder::Encoder(const Encoder& o) : cfg_(o.cfg_), impl_(std::make_unique<Impl>(*o.impl_)) {}
Encoder& Encoder::operator=(const Encoder& o) {
  if (this != &o) {
    cfg_ = o.cfg_;
    impl_ = std::make_unique<Impl>(*o.impl_);
  }
  return *this;
}
Encoder::Encoder(Encoder&&) noexcept = default;
Encoder& Encoder::operator=(Encoder&&) noexcept = default;
Encoder::~Encoder() = default;

void Encoder::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "encoder-init"));
  const double he = std::sqrt(2.0);
  impl_->stem.init(rng, he);
  for (auto& blk : impl_->blocks) {
    for (auto& layer : blk.layers) {
      if (layer.bottleneck) layer.reduce.init(rng, he);
      layer.conv.init(rng, he);
    }
    if (blk.has_transition) blk.transition.init(rng, he);
  }
}

Tensor Encoder::forward(const Tensor& x, std::shared_ptr<EncoderTrace>* trace_out) const {
  const Dims3 in_dims = dims_of(cfg_.input_shape);
  require(x.shape.size() == 5 && x.dim(1) == 1 && x.dim(2) == in_dims.d && x.dim(3) == in_dims.h &&
              x.dim(4) == in_dims.w,
          ErrorKind::kArgument, "encoder: expected input [N,1," + std::to_string(in_dims.d) + "," +
                                    std::to_string(in_dims.h) + "," + std::to_string(in_dims.w) + "], got " +
                                    x.shape_string());
  const int n = x.dim(0);
  auto tr = std::make_shared<EncoderTrace>();
  tr->batch = n;
  if (trace_out) tr->input = x;

  const Conv3d& stem = impl_->stem;
  const int c0 = cfg_.initial_channels;
  tr->stem_dims = stem.output_dims(in_dims);
  const Dims3 sd = tr->stem_dims;
  require(sd.d > 0 && sd.h > 0 && sd.w > 0, ErrorKind::kConfig, "encoder: input too small for the stem");
  tr->stem_out = Tensor({n, c0, sd.d, sd.h, sd.w});
  stem.forward(n, ConstVolView(x.ptr(), in_dims.volume(), 1, in_dims), view(tr->stem_out, 0, c0, sd, c0));
  tr->stem_act = Tensor(tr->stem_out.shape);
  relu_into(tr->stem_out.ptr(), tr->stem_act.ptr(), tr->stem_out.size());

  Dims3 dims = cfg_.stem_pool ? pool_dims(sd) : sd;
  const int g = cfg_.growth_rate;
  tr->blocks.resize(impl_->blocks.size());
  for (std::size_t b = 0; b < impl_->blocks.size(); ++b) {
    const DenseBlock& blk = impl_->blocks[b];
    auto& bt = tr->blocks[b];
    bt.dims = dims;
    const int ctot = blk.out_channels;
    bt.features = Tensor({n, ctot, dims.d, dims.h, dims.w});
    bt.activations = Tensor(bt.features.shape);
    if (b == 0) {
      if (cfg_.stem_pool) {
        max_pool_forward(n, cview(tr->stem_act, 0, c0, sd, c0), view(bt.features, 0, c0, dims, ctot), tr->pool_argmax);
      } else {
        for (int i = 0; i < n; ++i) {
          std::memcpy(bt.features.ptr() + static_cast<std::size_t>(i) * ctot * dims.volume(),
                      tr->stem_act.ptr() + static_cast<std::size_t>(i) * c0 * dims.volume(),
                      sizeof(float) * c0 * dims.volume());
        }
      }
    } else {
      const auto& prev = tr->blocks[b - 1];
      const int ct = impl_->blocks[b - 1].transition.out_channels();
      avg_pool_forward(n, cview(prev.transition_out, 0, ct, prev.dims, ct), view(bt.features, 0, ct, dims, ctot));
    }
    const std::size_t vol = dims.volume();
    auto relu_slice = [&](int c_begin, int count) {
      for (int i = 0; i < n; ++i) {
        const std::size_t off = (static_cast<std::size_t>(i) * ctot + c_begin) * vol;
        relu_into(bt.features.ptr() + off, bt.activations.ptr() + off, static_cast<std::size_t>(count) * vol);
      }
    };
    relu_slice(0, blk.in_channels);
    for (std::size_t l = 0; l < blk.layers.size(); ++l) {
      const DenseLayer& layer = blk.layers[l];
      const int c = blk.in_channels + static_cast<int>(l) * g;
      const VolView out = view(bt.features, c, g, dims, ctot);
      if (layer.bottleneck) {
        const int cb = layer.reduce.out_channels();
        Tensor h({n, cb, dims.d, dims.h, dims.w});
        layer.reduce.forward(n, cview(bt.activations, 0, c, dims, ctot), view(h, 0, cb, dims, cb));
        Tensor hr(h.shape);
        relu_into(h.ptr(), hr.ptr(), h.size());
        layer.conv.forward(n, cview(hr, 0, cb, dims, cb), out);
        bt.reduce_out.push_back(std::move(h));
        bt.reduce_act.push_back(std::move(hr));
      } else {
        layer.conv.forward(n, cview(bt.activations, 0, c, dims, ctot), out);
      }
      relu_slice(c, g);
    }
    if (blk.has_transition) {
      const int ct = blk.transition.out_channels();
      bt.transition_out = Tensor({n, ct, dims.d, dims.h, dims.w});
      blk.transition.forward(n, cview(bt.activations, 0, ctot, dims, ctot), view(bt.transition_out, 0, ct, dims, ct));
      dims = pool_dims(dims);
    }
  }

  const auto& last = tr->blocks.back();
  const int f = impl_->blocks.back().out_channels;
  const std::size_t vol = last.dims.volume();
  Tensor feat({n, f});
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < f; ++c) {
      const float* a = last.activations.ptr() + (static_cast<std::size_t>(i) * f + c) * vol;
      double s = 0.0;
      for (std::size_t k = 0; k < vol; ++k) s += a[k];
      feat.data[static_cast<std::size_t>(i) * f + c] = static_cast<float>(s / static_cast<double>(vol));
    }
  }
  if (trace_out) *trace_out = std::move(tr);
  return feat;
}

void Encoder::backward(const EncoderTrace& tr, const Tensor& dfeat) {
  const int n = tr.batch;
  require(!tr.input.data.empty(), ErrorKind::kArgument, "encoder: backward needs a training trace");
  const int g = cfg_.growth_rate;
  const std::size_t nb = impl_->blocks.size();

  // dR of the last block from global average pooling
  std::vector<Tensor> dact(nb);
  {
    const auto& last = tr.blocks.back();
    const int f = impl_->blocks.back().out_channels;
    const std::size_t vol = last.dims.volume();
    dact[nb - 1] = Tensor(last.features.shape);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < f; ++c) {
        const float gval = dfeat.data[static_cast<std::size_t>(i) * f + c] / static_cast<float>(vol);
        float* d = dact[nb - 1].ptr() + (static_cast<std::size_t>(i) * f + c) * vol;
        std::fill(d, d + vol, gval);
      }
    }
  }

  for (std::size_t bi = nb; bi-- > 0;) {
    DenseBlock& blk = impl_->blocks[bi];
    const auto& bt = tr.blocks[bi];
    const Dims3 dims = bt.dims;
    const std::size_t vol = dims.volume();
    const int ctot = blk.out_channels;
    Tensor& dr = dact[bi];
    if (dr.data.empty()) dr = Tensor(bt.features.shape);

    auto mask_slice = [&](int c_begin, int count, Tensor& out, int out_channels) {
      // out[:, 0:count] = dr[:, c_begin:c_begin+count] * (F > 0)
      for (int i = 0; i < n; ++i) {
        const std::size_t src = (static_cast<std::size_t>(i) * ctot + c_begin) * vol;
        const std::size_t dst = static_cast<std::size_t>(i) * out_channels * vol;
        relu_grad_into(dr.ptr() + src, bt.features.ptr() + src, out.ptr() + dst, static_cast<std::size_t>(count) * vol);
      }
    };

    for (std::size_t l = blk.layers.size(); l-- > 0;) {
      DenseLayer& layer = blk.layers[l];
      const int c = blk.in_channels + static_cast<int>(l) * g;
      Tensor dout({n, g, dims.d, dims.h, dims.w});
      mask_slice(c, g, dout, g);
      if (layer.bottleneck) {
        const int cb = layer.reduce.out_channels();
        Tensor dhr({n, cb, dims.d, dims.h, dims.w});
        layer.conv.backward(n, cview(bt.reduce_act[l], 0, cb, dims, cb), cview(dout, 0, g, dims, g),
                            view(dhr, 0, cb, dims, cb));
        Tensor dh(dhr.shape);
        relu_grad_into(dhr.ptr(), bt.reduce_out[l].ptr(), dh.ptr(), dh.size());
        layer.reduce.backward(n, cview(bt.activations, 0, c, dims, ctot), cview(dh, 0, cb, dims, cb),
                              view(dr, 0, c, dims, ctot));
      } else {
        layer.conv.backward(n, cview(bt.activations, 0, c, dims, ctot), cview(dout, 0, g, dims, g),
                            view(dr, 0, c, dims, ctot));
      }
    }

    // gradient w.r.t. the block input (pre-activation F[:, :in])
    const int cin = blk.in_channels;
    Tensor din({n, cin, dims.d, dims.h, dims.w});
    mask_slice(0, cin, din, cin);

    if (bi > 0) {
      DenseBlock& prev = impl_->blocks[bi - 1];
      const auto& pt = tr.blocks[bi - 1];
      const int ct = prev.transition.out_channels();
      Tensor dt(pt.transition_out.shape);
      avg_pool_backward(n, cview(din, 0, cin, dims, cin), view(dt, 0, ct, pt.dims, ct));
      dact[bi - 1] = Tensor(pt.features.shape);
      prev.transition.backward(n, cview(pt.activations, 0, prev.out_channels, pt.dims, prev.out_channels),
                               cview(dt, 0, ct, pt.dims, ct),
                               view(dact[bi - 1], 0, prev.out_channels, pt.dims, prev.out_channels));
    } else {
      const int c0 = cfg_.initial_channels;
      const Dims3 sd = tr.stem_dims;
      Tensor dstem_act(tr.stem_out.shape);
      if (cfg_.stem_pool) {
        max_pool_backward(n, tr.pool_argmax, cview(din, 0, c0, dims, c0), view(dstem_act, 0, c0, sd, c0));
      } else {
        dstem_act = din;
      }
      Tensor dstem(tr.stem_out.shape);
      relu_grad_into(dstem_act.ptr(), tr.stem_out.ptr(), dstem.ptr(), dstem.size());
      const Dims3 in_dims = dims_of(cfg_.input_shape);
      impl_->stem.backward(n, ConstVolView(tr.input.ptr(), in_dims.volume(), 1, in_dims), cview(dstem, 0, c0, sd, c0),
                           VolView{});
    }
  }
}

ParamList Encoder::params() {
  ParamList out{&impl_->stem.weight(), &impl_->stem.bias()};
  for (auto& blk : impl_->blocks) {
    for (auto& layer : blk.layers) {
      if (layer.bottleneck) {
        out.push_back(&layer.reduce.weight());
        out.push_back(&layer.reduce.bias());
      }
      out.push_back(&layer.conv.weight());
      out.push_back(&layer.conv.bias());
    }
    if (blk.has_transition) {
      out.push_back(&blk.transition.weight());
      out.push_back(&blk.transition.bias());
    }
  }
  return out;
}

ConstParamList Encoder::params() const {
  const ParamList p = const_cast<Encoder*>(this)->params();
  return {p.begin(), p.end()};
}

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::string name, int in_features, std::vector<int> hidden, double leaky_slope)
    : name_(std::move(name)), in_(in_features), hidden_(std::move(hidden)), slope_(leaky_slope) {
  require(in_features > 0, ErrorKind::kConfig, name_ + ": feature dimension must be positive");
  int prev = in_features;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    require(hidden_[i] > 0, ErrorKind::kConfig, name_ + ": hidden widths must be positive");
    layers_.emplace_back(name_ + ".fc" + std::to_string(i), prev, hidden_[i]);
    prev = hidden_[i];
  }
  layers_.emplace_back(name_ + ".fc" + std::to_string(hidden_.size()), prev, 1);
}

void Mlp::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, name_ + "-init"));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].init(rng, i + 1 < layers_.size() ? std::sqrt(2.0 / (1.0 + slope_ * slope_)) : 1.0);
  }
}

Tensor Mlp::forward(const Tensor& x, Trace* trace) const {
  Tensor h = x;
  if (trace) {
    trace->inputs.clear();
    trace->pre.clear();
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (trace) trace->inputs.push_back(h);
    Tensor z = layers_[i].forward(h);
    if (i + 1 == layers_.size()) return z;
    if (trace) trace->pre.push_back(z);
    for (float& v : z.values()) v = v > 0.0f ? v : static_cast<float>(slope_) * v;
    h = std::move(z);
  }
  return h;
}

Tensor Mlp::backward(const Trace& trace, const Tensor& dlogits) {
  Tensor g = dlogits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 < layers_.size()) {
      const Tensor& z = trace.pre[i];
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (z.data[k] <= 0.0f) g.data[k] *= static_cast<float>(slope_);
      }
    }
    g = layers_[i].backward(trace.inputs[i], g);
  }
  return g;
}

ParamList Mlp::params() {
  ParamList out;
  for (auto& l : layers_) {
    out.push_back(&l.weight());
    out.push_back(&l.bias());
  }
  return out;
}

ConstParamList Mlp::params() const {
  const ParamList p = const_cast<Mlp*>(this)->params();
  return {p.begin(), p.end()};
}

Mlp build_head(int feature_dim) { return Mlp("head", feature_dim, {}); }

Mlp build_discriminator(int feature_dim, std::vector<int> hidden) {
  return Mlp("discriminator", feature_dim, std::move(hidden));
}

Tensor make_batch(std::span<const Grid3<float>* const> volumes) {
  require(!volumes.empty(), ErrorKind::kArgument, "make_batch: empty batch");
  const Shape3 s = volumes.front()->shape();
  Tensor t({static_cast<int>(volumes.size()), 1, s.z, s.y, s.x});
  const std::size_t vol = s.count();
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    require(volumes[i]->shape() == s, ErrorKind::kArgument, "make_batch: volumes differ in shape");
    std::memcpy(t.ptr() + i * vol, volumes[i]->values().data(), vol * sizeof(float));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

constexpr double kLogEps = -27.631021115928547;  // log(1e-12)

// log sigma(z), stable for large |z|
double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double focal_loss(double logit, int label, double gamma) {
  // p_t = sigma(z) for y = 1 and sigma(-z) for y = 0
  const double zt = label ? logit : -logit;
  const double log_pt = std::max(log_sigmoid(zt), kLogEps);
  const double one_minus = sigmoid(-zt);
  const double mod = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
  return -mod * log_pt;
}

double focal_loss_grad(double logit, int label, double gamma) {
  const double zt = label ? logit : -logit;
  const double raw_log_pt = log_sigmoid(zt);
  const double pt = sigmoid(zt);
  const double q = sigmoid(-zt);  // 1 - p_t
  double d_dzt;
  if (raw_log_pt < kLogEps) {
    // clamped log: only the modulating factor varies
    d_dzt = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma) * pt * kLogEps;
  } else {
    const double qg = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    d_dzt = gamma * qg * pt * raw_log_pt - qg * q;
  }
  return label ? d_dzt : -d_dzt;
}

double bce_with_logits(double logit, int label) { return -log_sigmoid(label ? logit : -logit); }

double bce_with_logits_grad(double logit, int label) { return sigmoid(logit) - (label ? 1.0 : 0.0); }

BatchLoss focal_loss_batch(const Tensor& logits, std::span<const int> labels, double gamma) {
  require(logits.size() == labels.size() && !labels.empty(), ErrorKind::kArgument,
          "focal_loss_batch: logits/labels size mismatch");
  BatchLoss out;
  out.dlogits = Tensor(logits.shape);
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.loss += focal_loss(logits.data[i], labels[i], gamma) * inv;
    out.dlogits.data[i] = static_cast<float>(focal_loss_grad(logits.data[i], labels[i], gamma) * inv);
  }
  return out;
}

BatchLoss bce_batch(const Tensor& logits, std::span<const int> labels) {
  require(logits.size() == labels.size() && !labels.empty(), ErrorKind::kArgument,
          "bce_batch: logits/labels size mismatch");
  BatchLoss out;
  out.dlogits = Tensor(logits.shape);
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.loss += bce_with_logits(logits.data[i], labels[i]) * inv;
    out.dlogits.data[i] = static_cast<float>(bce_with_logits_grad(logits.data[i], labels[i]) * inv);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

bool Checkpoint::has_part(const std::string& part) const {
  return std::any_of(arrays.begin(), arrays.end(),
                     [&](const auto& a) { return a.first.rfind(part + ".", 0) == 0; });
}

void add_params(Checkpoint& ckpt, const ConstParamList& params) {
  for (const Param* p : params) {
    require(ckpt.find(p->name) == nullptr, ErrorKind::kArgument, "checkpoint: duplicate array " + p->name);
    ckpt.arrays.emplace_back(p->name, p->value);
  }
}

void load_params(const Checkpoint& ckpt, const ParamList& params) {
  for (Param* p : params) {
    const Tensor* t = ckpt.find(p->name);
    require(t != nullptr, ErrorKind::kConfig, "checkpoint: missing array " + p->name);
    require(t->shape == p->value.shape, ErrorKind::kConfig,
            "checkpoint: array " + p->name + " has shape " + t->shape_string() + ", model expects " +
                p->value.shape_string());
    p->value = *t;
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json arrays = json::array();
  for (const auto& [name, t] : ckpt.arrays) {
    const std::string file = name + ".f32";
    io::write_f32_blob(dir / file, t.values());
    arrays.push_back({{"name", name}, {"shape", t.shape}, {"dtype", "float32"}, {"byte_order", "little"}, {"file", file}});
  }
  json j = {{"format", "udakit-checkpoint"}, {"version", 1}, {"arrays", arrays}, {"metadata", ckpt.metadata}};
  io::write_text_atomic(dir / "checkpoint.json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto header = dir / "checkpoint.json";
  json j;
  try {
    j = json::parse(io::read_text(header));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, header.string() + ": malformed JSON: " + e.what());
  }
  Checkpoint ckpt;
  try {
    require(j.at("format") == "udakit-checkpoint", ErrorKind::kIo, header.string() + ": not a checkpoint");
    for (const auto& a : j.at("arrays")) {
      require(a.at("dtype") == "float32", ErrorKind::kIo, header.string() + ": unsupported dtype");
      const auto shape = a.at("shape").get<std::vector<int>>();
      Tensor t(shape);
      t.data = io::read_f32_blob(dir / a.at("file").get<std::string>(), Tensor::count(shape));
      ckpt.arrays.emplace_back(a.at("name").get<std::string>(), std::move(t));
    }
    ckpt.metadata = j.value("metadata", json::object());
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, header.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace uda::nn
