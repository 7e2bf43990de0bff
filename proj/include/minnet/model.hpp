#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "minnet/blocks.hpp"
#include "minnet/layers.hpp"
#include "minnet/tensor.hpp"

namespace minnet {

enum class Family { pyramid_resnet, densenet_bc };
enum class WidenRounding { round, floor };

struct ModelSpec {
  Family family = Family::pyramid_resnet;
  int n = 3;              // blocks per stack
  int k = 12;             // DenseNet growth rate
  int alpha = 48;         // PyramidNet widening total
  int q = 2;              // Min-block expansion factor
  int num_classes = 10;
  int base_channels = 16; // PyramidNet initial width; DenseNet always starts at 2k
  bool min_substitution = false;
  uint64_t seed = 0;
  WidenRounding widen_rounding = WidenRounding::round;

  // DenseNet-BC naming convention depth for three stacks of bottlenecks.
  int depth_l() const { return 6 * n + 4; }
};

enum class BlockKind { min_block, pyramid_basic, dense_bottleneck };

struct BlockPlanEntry {
  BlockKind kind;
  int64_t d_in = 0;
  int64_t d_out = 0;
  int stride = 1;
};

// The effective per-stack block layout, with the Min-substitution rule
// applied when the spec asks for it: the first block of every stack
// becomes a Min-block.
std::vector<std::vector<BlockPlanEntry>> block_plan(const ModelSpec& spec);

using Block = std::variant<MinBlock, PyramidBasicBlock, DenseBottleneckBlock>;

class Model {
 public:
  explicit Model(const ModelSpec& spec);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  // 1 x 3 x 32 x 32 (or any NCHW batch) -> N x num_classes logits.
  Tensor forward(const Tensor& x, bool training);

  int64_t count_params() const { return params_.total_size(); }
  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Running-stat buffers in deterministic walk order (for checkpoints).
  std::vector<BufferEntry> buffers();

  std::vector<MinBlock*> min_blocks();
  std::vector<std::vector<BlockKind>> block_kinds() const;

 private:
  struct Transition {
    BatchNormLayer bn;
    Conv2dLayer conv;
  };

  ModelSpec spec_;
  ParamStore params_;
  Conv2dLayer conv0_;
  std::optional<BatchNormLayer> bn0_;  // pyramid family only
  std::vector<std::vector<Block>> stacks_;
  std::vector<Transition> transitions_;  // DenseNet: after stacks 1 and 2
  BatchNormLayer final_bn_;
  LinearLayer fc_;
  int64_t final_channels_ = 0;
};

Model build(const ModelSpec& spec);

inline int64_t count_params(const Model& m) { return m.count_params(); }

}  // namespace minnet
