#include "minnet/model.hpp"

#include <cmath>
#include <stdexcept>

#include "minnet/rng.hpp"

namespace minnet {

namespace {

void validate_spec(const ModelSpec& spec) {
  if (spec.n < 1) throw std::invalid_argument("model spec: n must be >= 1");
  if (spec.q < 1) throw std::invalid_argument("model spec: q must be >= 1");
  if (spec.num_classes < 2) throw std::invalid_argument("model spec: num_classes must be >= 2");
  if (spec.family == Family::densenet_bc && spec.k < 1)
    throw std::invalid_argument("model spec: growth rate must be >= 1");
  if (spec.family == Family::pyramid_resnet) {
    if (spec.base_channels < 1) throw std::invalid_argument("model spec: base_channels must be >= 1");
    if (spec.alpha < 0) throw std::invalid_argument("model spec: alpha must be >= 0");
  }
}

int64_t widen(int base, int alpha, int j, int total, WidenRounding mode) {
  const double w = static_cast<double>(alpha) * j / total;
  const double add = mode == WidenRounding::round ? std::llround(w) : std::floor(w);
  return base + static_cast<int64_t>(add);
}

}  // namespace

std::vector<std::vector<BlockPlanEntry>> block_plan(const ModelSpec& spec) {
  validate_spec(spec);
  std::vector<std::vector<BlockPlanEntry>> plan(3);
  if (spec.family == Family::pyramid_resnet) {
    const int total = 3 * spec.n;
    int64_t d_in = spec.base_channels;
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < spec.n; ++i) {
        const int j = s * spec.n + i + 1;
        const int64_t d_out = widen(spec.base_channels, spec.alpha, j, total, spec.widen_rounding);
        const int stride = (s > 0 && i == 0) ? 2 : 1;
        const bool is_min = spec.min_substitution && i == 0;
        plan[s].push_back({is_min ? BlockKind::min_block : BlockKind::pyramid_basic, d_in, d_out,
                           stride});
        d_in = d_out;
      }
    }
  } else {
    int64_t c = 2 * spec.k;
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < spec.n; ++i) {
        const bool is_min = spec.min_substitution && i == 0;
        // A Min-block inside a dense block keeps its residual; the shortcut
        // reduces the concatenated input down to k maps. Downsampling is
        // done by the transitions, so the stride is always 1 here.
        plan[s].push_back(
            {is_min ? BlockKind::min_block : BlockKind::dense_bottleneck, c, spec.k, 1});
        c += spec.k;
      }
      if (s < 2) c = c / 2;  // compression 0.5 transition
    }
  }
  return plan;
}

Model::Model(const ModelSpec& spec) : spec_(spec) {
  validate_spec(spec);
  Rng rng(derive_seed(spec.seed, RngStream::init));
  ParamRegistry reg{params_, rng};
  const auto plan = block_plan(spec);

  if (spec.family == Family::pyramid_resnet) {
    conv0_ = Conv2dLayer(spec.base_channels, 3, 3, 1, 1, "conv0", reg);
    bn0_.emplace(spec.base_channels, "bn0", reg);
  } else {
    conv0_ = Conv2dLayer(2 * spec.k, 3, 3, 1, 1, "conv0", reg);
  }

  stacks_.resize(3);
  int64_t c = 0;
  for (int s = 0; s < 3; ++s) {
    stacks_[s].reserve(plan[s].size());
    for (size_t i = 0; i < plan[s].size(); ++i) {
      const auto& e = plan[s][i];
      const std::string name =
          "stack" + std::to_string(s + 1) + ".block" + std::to_string(i);
      switch (e.kind) {
        case BlockKind::min_block: {
          MinBlockConfig cfg;
          cfg.d_in = e.d_in;
          cfg.d_out = e.d_out;
          cfg.q = spec.q;
          cfg.stride = e.stride;
          stacks_[s].emplace_back(std::in_place_type<MinBlock>, cfg, name, reg);
          break;
        }
        case BlockKind::pyramid_basic:
          stacks_[s].emplace_back(std::in_place_type<PyramidBasicBlock>, e.d_in, e.d_out,
                                  e.stride, name, reg);
          break;
        case BlockKind::dense_bottleneck:
          stacks_[s].emplace_back(std::in_place_type<DenseBottleneckBlock>, e.d_in, spec.k, name,
                                  reg);
          break;
      }
    }
    if (spec.family == Family::pyramid_resnet) {
      c = plan[s].back().d_out;
    } else {
      c = plan[s].back().d_in + spec.k;
      if (s < 2) {
        const int64_t reduced = c / 2;
        const std::string name = "trans" + std::to_string(s + 1);
        transitions_.push_back(Transition{BatchNormLayer(c, name + ".bn", reg),
                                          Conv2dLayer(reduced, c, 1, 1, 0, name + ".conv", reg)});
        c = reduced;
      }
    }
  }

  final_channels_ = c;
  final_bn_ = BatchNormLayer(c, "final_bn", reg);
  fc_ = LinearLayer(spec.num_classes, c, "fc", reg);
}

Tensor Model::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw std::invalid_argument("model: input must be N x 3 x H x W");
  Tensor h = conv0_.forward(x);
  if (spec_.family == Family::pyramid_resnet) {
    h = bn0_->forward(h, training);
    for (auto& stack : stacks_)
      for (auto& blk : stack)
        h = std::visit([&](auto& b) { return b.forward(h, training); }, blk);
  } else {
    for (size_t s = 0; s < stacks_.size(); ++s) {
      for (auto& blk : stacks_[s]) {
        Tensor grown = std::visit([&](auto& b) { return b.forward(h, training); }, blk);
        h = concat_channels(h, grown);
      }
      if (s < transitions_.size()) {
        auto& t = transitions_[s];
        h = relu(t.bn.forward(h, training));
        h = t.conv.forward(h);
        h = avg_pool2d(h, 2, 2);
      }
    }
  }
  h = relu(final_bn_.forward(h, training));
  h = global_avg_pool(h);
  return fc_.forward(h);
}

std::vector<BufferEntry> Model::buffers() {
  std::vector<BufferEntry> out;
  if (bn0_) bn0_->collect_buffers(out);
  for (auto& stack : stacks_)
    for (auto& blk : stack)
      std::visit([&](auto& b) { b.collect_buffers(out); }, blk);
  for (auto& t : transitions_) t.bn.collect_buffers(out);
  final_bn_.collect_buffers(out);
  return out;
}

std::vector<MinBlock*> Model::min_blocks() {
  std::vector<MinBlock*> out;
  for (auto& stack : stacks_)
    for (auto& blk : stack)
      if (auto* m = std::get_if<MinBlock>(&blk)) out.push_back(m);
  return out;
}

std::vector<std::vector<BlockKind>> Model::block_kinds() const {
  std::vector<std::vector<BlockKind>> out;
  for (const auto& stack : stacks_) {
    std::vector<BlockKind> kinds;
    for (const auto& blk : stack) {
      if (std::holds_alternative<MinBlock>(blk))
        kinds.push_back(BlockKind::min_block);
      else if (std::holds_alternative<PyramidBasicBlock>(blk))
        kinds.push_back(BlockKind::pyramid_basic);
      else
        kinds.push_back(BlockKind::dense_bottleneck);
    }
    out.push_back(std::move(kinds));
  }
  return out;
}

Model build(const ModelSpec& spec) { return Model(spec); }

}  // namespace minnet
