#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "minnet/layers.hpp"
#include "minnet/ops.hpp"
#include "minnet/tensor.hpp"

namespace minnet {

struct MinBlockConfig {
  int64_t d_in = 0;
  int64_t d_out = 0;
  int q = 2;         // expansion factor for the first 1x1 convolution
  int stride = 1;    // stride of the depthwise stage, 1 or 2
  int k_size = 3;    // depthwise kernel size
  bool use_residual = true;
};

// Intermediate activations of a Min-block, retained for probing.
struct BlockOutput {
  Tensor tensor;
  Tensor t1;        // expanded maps after 1x1 conv + BN + ReLU
  Tensor branch_a;  // depthwise branch after instance norm + ReLU
  Tensor branch_b;
  Tensor t2;        // elementwise min of the branches
};

// Shortcut path: 2x2 average pooling when the block downsamples, then
// channel adaptation (zero-pad up, learned 1x1 + bias down, identity on
// match). The reducing conv has no norm or ReLU after it, hence the bias.
Tensor adapt_residual(const Tensor& t0, int stride, int64_t d_out, const Tensor* reduce_w,
                      const Tensor* reduce_b);

class MinBlock {
 public:
  MinBlock(const MinBlockConfig& cfg, const std::string& name, ParamRegistry& reg);

  Tensor forward(const Tensor& x, bool training);
  BlockOutput forward_detailed(const Tensor& x, bool training);

  const MinBlockConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  const Tensor& filters_a() const { return dw_a_.w; }
  const Tensor& filters_b() const { return dw_b_.w; }
  bool has_reduce() const { return has_reduce_; }
  void collect_buffers(std::vector<BufferEntry>& out) {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
  }

 private:
  Tensor run(const Tensor& x, bool training, BlockOutput* aux);

  MinBlockConfig cfg_;
  std::string name_;
  Conv2dLayer expand_;
  BatchNormLayer bn1_;
  DepthwiseConv2dLayer dw_a_, dw_b_;
  Conv2dLayer project_;
  BatchNormLayer bn2_;
  bool has_reduce_ = false;
  Tensor reduce_w_, reduce_b_;
};

// BN -> 3x3 conv -> BN -> ReLU -> 3x3 conv -> BN, plus shortcut. No ReLU
// after the last norm and no ReLU before the first conv.
class PyramidBasicBlock {
 public:
  PyramidBasicBlock(int64_t d_in, int64_t d_out, int stride, const std::string& name,
                    ParamRegistry& reg);

  Tensor forward(const Tensor& x, bool training);

  int64_t d_in() const { return d_in_; }
  int64_t d_out() const { return d_out_; }
  int stride() const { return stride_; }
  void collect_buffers(std::vector<BufferEntry>& out) {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
    bn3_.collect_buffers(out);
  }

 private:
  int64_t d_in_, d_out_;
  int stride_;
  BatchNormLayer bn1_;
  Conv2dLayer conv1_;
  BatchNormLayer bn2_;
  Conv2dLayer conv2_;
  BatchNormLayer bn3_;
  bool has_reduce_ = false;
  Tensor reduce_w_, reduce_b_;
};

// BN -> ReLU -> 1x1 conv (d_in -> 4k) -> BN -> ReLU -> 3x3 conv (4k -> k).
// Returns the k new feature maps; the dense block concatenates them.
class DenseBottleneckBlock {
 public:
  DenseBottleneckBlock(int64_t d_in, int growth, const std::string& name, ParamRegistry& reg);

  Tensor forward(const Tensor& x, bool training);

  int growth() const { return growth_; }
  void collect_buffers(std::vector<BufferEntry>& out) {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
  }

 private:
  int64_t d_in_;
  int growth_;
  BatchNormLayer bn1_;
  Conv2dLayer conv1_;
  BatchNormLayer bn2_;
  Conv2dLayer conv2_;
};

}  // namespace minnet
