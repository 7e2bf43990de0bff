#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "minnet/ops.hpp"
#include "minnet/rng.hpp"
#include "minnet/tensor.hpp"

namespace minnet {

// One learnable tensor. Norm scale/shift and biases are decay-ineligible;
// convolution/linear weights are decay-eligible.
struct LayerParams {
  std::string name;
  Tensor tensor;
  bool decay_eligible = false;
};

class ParamStore {
 public:
  void add(std::string name, Tensor t, bool decay_eligible) {
    for (const auto& p : items_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    items_.push_back(LayerParams{std::move(name), std::move(t), decay_eligible});
  }

  std::vector<LayerParams>& items() { return items_; }
  const std::vector<LayerParams>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

  const LayerParams* find(const std::string& name) const {
    for (const auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

 private:
  std::vector<LayerParams> items_;
};

// Non-learnable per-model state that still belongs in a checkpoint
// (batch-norm running statistics). Entries are collected on demand by
// walking the model, never stored, so layer objects stay movable.
struct BufferEntry {
  std::string name;
  std::vector<float>* data;
};

// Threaded through block constructors so every layer registers its
// parameters in one deterministic order.
struct ParamRegistry {
  ParamStore& params;
  Rng& init_rng;
};

// He-style normal init: std = sqrt(2 / fan_in), fan_in = in_channels * K^2.
inline Tensor init_conv(const std::vector<int64_t>& shape, Rng& rng) {
  if (shape.size() != 4) throw std::invalid_argument("init_conv: expects OIKK or C1KK shape");
  const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
  const float std_dev = static_cast<float>(std::sqrt(2.0 / fan_in));
  Tensor t(shape);
  for (auto& v : t.values()) v = std_dev * rng.normalf();
  return t;
}

inline NormState init_norm(int64_t channels) {
  if (channels < 1) throw std::invalid_argument("init_norm: channels must be >= 1");
  NormState st;
  st.gamma = Tensor({channels}, 1.0f);
  st.beta = Tensor({channels}, 0.0f);
  st.running_mean.assign(static_cast<size_t>(channels), 0.0f);
  st.running_var.assign(static_cast<size_t>(channels), 1.0f);
  st.momentum = 0.1f;
  return st;
}

// ---------------------------------------------------------------------------
// layer records

struct Conv2dLayer {
  Tensor w;
  int stride = 1;
  int padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t out_ch, int64_t in_ch, int64_t k, int stride_, int padding_,
              const std::string& name, ParamRegistry& reg)
      : stride(stride_), padding(padding_) {
    w = init_conv({out_ch, in_ch, k, k}, reg.init_rng);
    reg.params.add(name + ".w", w, /*decay_eligible=*/true);
  }

  Tensor forward(const Tensor& x) const { return conv2d(x, w, stride, padding); }
};

struct DepthwiseConv2dLayer {
  Tensor w;
  int stride = 1;
  int padding = 0;

  DepthwiseConv2dLayer() = default;
  DepthwiseConv2dLayer(int64_t channels, int64_t k, int stride_, int padding_,
                       const std::string& name, ParamRegistry& reg)
      : stride(stride_), padding(padding_) {
    w = init_conv({channels, 1, k, k}, reg.init_rng);
    reg.params.add(name + ".w", w, /*decay_eligible=*/true);
  }

  Tensor forward(const Tensor& x) const { return depthwise_conv2d(x, w, stride, padding); }
};

struct BatchNormLayer {
  std::string name;
  NormState st;

  BatchNormLayer() = default;
  BatchNormLayer(int64_t channels, const std::string& name_, ParamRegistry& reg) : name(name_) {
    st = init_norm(channels);
    reg.params.add(name + ".gamma", st.gamma, /*decay_eligible=*/false);
    reg.params.add(name + ".beta", st.beta, /*decay_eligible=*/false);
  }

  Tensor forward(const Tensor& x, bool training) { return batch_norm(x, st, training); }

  void collect_buffers(std::vector<BufferEntry>& out) {
    out.push_back({name + ".running_mean", &st.running_mean});
    out.push_back({name + ".running_var", &st.running_var});
  }
};

struct LinearLayer {
  Tensor w, b;

  LinearLayer() = default;
  LinearLayer(int64_t out_features, int64_t in_features, const std::string& name,
              ParamRegistry& reg) {
    const float std_dev = static_cast<float>(std::sqrt(2.0 / static_cast<double>(in_features)));
    w = Tensor({out_features, in_features});
    for (auto& v : w.values()) v = std_dev * reg.init_rng.normalf();
    b = Tensor({out_features}, 0.0f);
    reg.params.add(name + ".w", w, /*decay_eligible=*/true);
    reg.params.add(name + ".b", b, /*decay_eligible=*/false);
  }

  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
};

}  // namespace minnet
