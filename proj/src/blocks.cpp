#include "minnet/blocks.hpp"

#include <stdexcept>

namespace minnet {

Tensor adapt_residual(const Tensor& t0, int stride, int64_t d_out, const Tensor* reduce_w,
                      const Tensor* reduce_b) {
  if (stride != 1 && stride != 2) throw std::invalid_argument("adapt_residual: stride must be 1 or 2");
  Tensor r = t0;
  if (stride == 2) r = avg_pool2d(r, 2, 2);
  const int64_t d = r.dim(1);
  if (d < d_out) {
    r = pad_channels(r, d_out - d);
  } else if (d > d_out) {
    if (!reduce_w || !reduce_b)
      throw std::invalid_argument("adapt_residual: channel reduction needs learned parameters");
    r = conv2d(r, *reduce_w, 1, 0);
    r = bias_channels(r, *reduce_b);
  }
  return r;
}

// ---------------------------------------------------------------------------
// MinBlock

MinBlock::MinBlock(const MinBlockConfig& cfg, const std::string& name, ParamRegistry& reg)
    : cfg_(cfg), name_(name) {
  if (cfg.d_in < 1 || cfg.d_out < 1) throw std::invalid_argument("min block: bad channel plan");
  if (cfg.q < 1) throw std::invalid_argument("min block: expansion factor must be >= 1");
  if (cfg.stride != 1 && cfg.stride != 2)
    throw std::invalid_argument("min block: stride must be 1 or 2");
  const int64_t expanded = static_cast<int64_t>(cfg.q) * cfg.d_out;

  expand_ = Conv2dLayer(expanded, cfg.d_in, 1, 1, 0, name + ".expand", reg);
  bn1_ = BatchNormLayer(expanded, name + ".bn1", reg);
  dw_a_ = DepthwiseConv2dLayer(expanded, cfg.k_size, cfg.stride, 1, name + ".dws_a", reg);
  dw_b_ = DepthwiseConv2dLayer(expanded, cfg.k_size, cfg.stride, 1, name + ".dws_b", reg);
  project_ = Conv2dLayer(cfg.d_out, expanded, 1, 1, 0, name + ".project", reg);
  bn2_ = BatchNormLayer(cfg.d_out, name + ".bn2", reg);

  if (cfg.use_residual && cfg.d_in > cfg.d_out) {
    has_reduce_ = true;
    reduce_w_ = init_conv({cfg.d_out, cfg.d_in, 1, 1}, reg.init_rng);
    reduce_b_ = Tensor({cfg.d_out}, 0.0f);
    reg.params.add(name + ".reduce.w", reduce_w_, /*decay_eligible=*/true);
    reg.params.add(name + ".reduce.b", reduce_b_, /*decay_eligible=*/false);
  }
}

Tensor MinBlock::run(const Tensor& x, bool training, BlockOutput* aux) {
  if (x.dim(1) != cfg_.d_in) throw std::invalid_argument("min block: input channel mismatch");
  Tensor t1 = relu(bn1_.forward(expand_.forward(x), training));
  Tensor a = relu(instance_norm(dw_a_.forward(t1)));
  Tensor b = relu(instance_norm(dw_b_.forward(t1)));
  Tensor t2 = elementwise_min(a, b);
  Tensor t3 = relu(bn2_.forward(project_.forward(t2), training));
  Tensor out = t3;
  if (cfg_.use_residual) {
    Tensor res = adapt_residual(x, cfg_.stride, cfg_.d_out, has_reduce_ ? &reduce_w_ : nullptr,
                                has_reduce_ ? &reduce_b_ : nullptr);
    out = add(res, t3);
  }
  if (aux) {
    aux->t1 = t1;
    aux->branch_a = a;
    aux->branch_b = b;
    aux->t2 = t2;
    aux->tensor = out;
  }
  return out;
}

Tensor MinBlock::forward(const Tensor& x, bool training) { return run(x, training, nullptr); }

BlockOutput MinBlock::forward_detailed(const Tensor& x, bool training) {
  BlockOutput out;
  run(x, training, &out);
  return out;
}

// ---------------------------------------------------------------------------
// PyramidBasicBlock

PyramidBasicBlock::PyramidBasicBlock(int64_t d_in, int64_t d_out, int stride,
                                     const std::string& name, ParamRegistry& reg)
    : d_in_(d_in), d_out_(d_out), stride_(stride) {
  bn1_ = BatchNormLayer(d_in, name + ".bn1", reg);
  conv1_ = Conv2dLayer(d_out, d_in, 3, stride, 1, name + ".conv1", reg);
  bn2_ = BatchNormLayer(d_out, name + ".bn2", reg);
  conv2_ = Conv2dLayer(d_out, d_out, 3, 1, 1, name + ".conv2", reg);
  bn3_ = BatchNormLayer(d_out, name + ".bn3", reg);
  if (d_in > d_out) {
    has_reduce_ = true;
    reduce_w_ = init_conv({d_out, d_in, 1, 1}, reg.init_rng);
    reduce_b_ = Tensor({d_out}, 0.0f);
    reg.params.add(name + ".reduce.w", reduce_w_, /*decay_eligible=*/true);
    reg.params.add(name + ".reduce.b", reduce_b_, /*decay_eligible=*/false);
  }
}

Tensor PyramidBasicBlock::forward(const Tensor& x, bool training) {
  if (x.dim(1) != d_in_) throw std::invalid_argument("pyramid block: input channel mismatch");
  Tensor h = bn1_.forward(x, training);
  h = conv1_.forward(h);
  h = bn2_.forward(h, training);
  h = relu(h);
  h = conv2_.forward(h);
  h = bn3_.forward(h, training);
  Tensor res = adapt_residual(x, stride_, d_out_, has_reduce_ ? &reduce_w_ : nullptr,
                              has_reduce_ ? &reduce_b_ : nullptr);
  return add(res, h);
}

// ---------------------------------------------------------------------------
// DenseBottleneckBlock

DenseBottleneckBlock::DenseBottleneckBlock(int64_t d_in, int growth, const std::string& name,
                                           ParamRegistry& reg)
    : d_in_(d_in), growth_(growth) {
  const int64_t mid = 4 * static_cast<int64_t>(growth);
  bn1_ = BatchNormLayer(d_in, name + ".bn1", reg);
  conv1_ = Conv2dLayer(mid, d_in, 1, 1, 0, name + ".conv1", reg);
  bn2_ = BatchNormLayer(mid, name + ".bn2", reg);
  conv2_ = Conv2dLayer(growth, mid, 3, 1, 1, name + ".conv2", reg);
}

Tensor DenseBottleneckBlock::forward(const Tensor& x, bool training) {
  if (x.dim(1) != d_in_) throw std::invalid_argument("bottleneck: input channel mismatch");
  Tensor h = relu(bn1_.forward(x, training));
  h = conv1_.forward(h);
  h = relu(bn2_.forward(h, training));
  return conv2_.forward(h);
}

}  // namespace minnet
