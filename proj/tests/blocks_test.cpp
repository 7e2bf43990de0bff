#include <cmath>

#include "doctest.h"
#include "minnet/blocks.hpp"
#include "minnet/ops.hpp"
#include "test_util.hpp"

using namespace minnet;
using testutil::random_tensor;

namespace {

struct BlockHarness {
  ParamStore params;
  Rng rng;
  ParamRegistry reg;
  explicit BlockHarness(uint64_t seed = 1) : rng(seed), reg{params, rng} {}
};

}  // namespace

TEST_SUITE_BEGIN("blocks");

TEST_CASE("min block output shape law") {
  for (int64_t d_in : {3, 4}) {
    for (int64_t d_out : {2, 4, 6}) {
      for (int stride : {1, 2}) {
        for (int q : {1, 2, 3}) {
          BlockHarness h;
          MinBlockConfig cfg{d_in, d_out, q, stride, 3, true};
          MinBlock blk(cfg, "b", h.reg);
          Rng rng(5);
          auto x = random_tensor<float>({2, d_in, 8, 8}, rng);
          auto out = blk.forward_detailed(x, true);
          CHECK(out.tensor.shape() ==
                std::vector<int64_t>{2, d_out, 8 / stride, 8 / stride});
          CHECK(out.t2.shape() ==
                std::vector<int64_t>{2, q * d_out, 8 / stride, 8 / stride});
        }
      }
    }
  }
}

TEST_CASE("identical filter pairs collapse the min to a single branch") {
  BlockHarness h;
  MinBlock blk({4, 4, 2, 1, 3, true}, "b", h.reg);
  // force v_m == g_m
  auto& a = const_cast<Tensor&>(blk.filters_a());
  auto& b = const_cast<Tensor&>(blk.filters_b());
  b.values() = a.values();
  Rng rng(6);
  auto x = random_tensor<float>({2, 4, 8, 8}, rng);
  auto out = blk.forward_detailed(x, true);
  CHECK(out.t2.values() == out.branch_a.values());  // min(a, a) == a bit-exactly
  CHECK(out.t2.values() == out.branch_b.values());
}

TEST_CASE("zeroed 1x1 convolutions reduce the block to the shortcut") {
  BlockHarness h;
  MinBlock blk({4, 4, 2, 1, 3, true}, "b", h.reg);
  auto* proj = h.params.find("b.project.w");
  REQUIRE(proj != nullptr);
  std::fill(proj->tensor.values().begin(), proj->tensor.values().end(), 0.0f);
  Rng rng(7);
  auto x = random_tensor<float>({2, 4, 8, 8}, rng);
  auto out = blk.forward(x, true);
  // T3 is exactly zero (BN of zeros with beta=0, then ReLU), so the output
  // is adapt_residual(T0) == T0 here
  CHECK(out.values() == x.values());
}

TEST_CASE("min is monotone: zeroing one branch can only decrease T2") {
  BlockHarness h;
  MinBlock blk({3, 5, 2, 1, 3, true}, "b", h.reg);
  Rng rng(8);
  auto x = random_tensor<float>({2, 3, 8, 8}, rng);
  auto out = blk.forward_detailed(x, true);
  auto zeros = Tensor(out.branch_b.shape());
  auto damaged = elementwise_min(out.branch_a, zeros);
  for (int64_t i = 0; i < damaged.numel(); ++i) CHECK(damaged.data()[i] <= out.t2.data()[i]);
}

TEST_CASE("gradient reaches both filter banks") {
  BlockHarness h;
  MinBlock blk({3, 4, 2, 1, 3, true}, "b", h.reg);
  Rng rng(9);
  auto x = random_tensor<float>({4, 3, 8, 8}, rng);
  h.params.zero_grads();
  Tape tape;
  {
    TapeScope<float> scope(tape);
    tape.backward(sum(blk.forward(x, true)));
  }
  auto l2 = [](const std::vector<float>& v) {
    double acc = 0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return acc;
  };
  CHECK(l2(blk.filters_a().grad()) > 0.0);
  CHECK(l2(blk.filters_b().grad()) > 0.0);
}

TEST_CASE("eq. 2 reading equivalence inside a block branch") {
  // library path: depthwise -> instance norm -> relu; other reading:
  // relu(filter response - mu) / sigma
  BlockHarness h;
  DepthwiseConv2dLayer dw(4, 3, 1, 1, "dw", h.reg);
  Rng rng(10);
  auto t1 = random_tensor<float>({2, 4, 8, 8}, rng);
  auto lib = relu(instance_norm(dw.forward(t1)));
  auto raw = dw.forward(t1);
  const int64_t plane = 64;
  for (int64_t mc = 0; mc < 8; ++mc) {
    double mean = 0, var = 0;
    for (int64_t i = 0; i < plane; ++i) mean += raw.data()[mc * plane + i];
    mean /= plane;
    for (int64_t i = 0; i < plane; ++i) {
      const double d = raw.data()[mc * plane + i] - mean;
      var += d * d;
    }
    var /= plane;
    const double inv_sigma = 1.0 / std::sqrt(var + kNormEps);
    for (int64_t i = 0; i < plane; ++i) {
      const double other = std::max(0.0, raw.data()[mc * plane + i] - mean) * inv_sigma;
      CHECK(lib.data()[mc * plane + i] == doctest::Approx(other).epsilon(1e-6));
    }
  }
}

TEST_CASE("adapt_residual cases") {
  Rng rng(11);

  SUBCASE("identity when stride 1 and widths match") {
    auto x = random_tensor<float>({1, 3, 4, 4}, rng);
    CHECK(adapt_residual(x, 1, 3, nullptr, nullptr).values() == x.values());
  }
  SUBCASE("stride 2 pools 2x2 windows") {
    auto ones = Tensor({1, 1, 4, 4}, 1.0f);
    auto out = adapt_residual(ones, 2, 1, nullptr, nullptr);
    CHECK(out.shape() == std::vector<int64_t>{1, 1, 2, 2});
    for (float v : out.values()) CHECK(v == 1.0f);
  }
  SUBCASE("narrower input is padded with all-zero maps") {
    auto x = random_tensor<float>({2, 2, 4, 4}, rng);
    auto out = adapt_residual(x, 1, 4, nullptr, nullptr);
    CHECK(out.shape() == std::vector<int64_t>{2, 4, 4, 4});
    for (int n = 0; n < 2; ++n)
      for (int64_t i = 0; i < 32; ++i) {
        CHECK(out.data()[n * 64 + i] == x.data()[n * 32 + i]);
        CHECK(out.data()[n * 64 + 32 + i] == 0.0f);
      }
  }
  SUBCASE("wider input needs the learned reduction") {
    auto x = random_tensor<float>({1, 4, 4, 4}, rng);
    CHECK_THROWS_AS(adapt_residual(x, 1, 2, nullptr, nullptr), std::invalid_argument);
    Rng wrng(3);
    auto w = init_conv({2, 4, 1, 1}, wrng);
    auto b = Tensor({2});
    auto out = adapt_residual(x, 1, 2, &w, &b);
    CHECK(out.shape() == std::vector<int64_t>{1, 2, 4, 4});
    // no ReLU and no batch norm on this path: exact 1x1 convolution + bias
    auto expect = bias_channels(conv2d(x, w, 1, 0), b);
    CHECK(out.values() == expect.values());
  }
  SUBCASE("invalid stride") {
    auto x = random_tensor<float>({1, 2, 4, 4}, rng);
    CHECK_THROWS_AS(adapt_residual(x, 3, 2, nullptr, nullptr), std::invalid_argument);
  }
}

TEST_CASE("pyramid block follows the quoted layer sequence") {
  SUBCASE("zero conv weights reduce to the shortcut") {
    BlockHarness h;
    PyramidBasicBlock blk(4, 4, 1, "p", h.reg);
    for (const char* name : {"p.conv1.w", "p.conv2.w"}) {
      auto* p = h.params.find(name);
      REQUIRE(p != nullptr);
      std::fill(p->tensor.values().begin(), p->tensor.values().end(), 0.0f);
    }
    Rng rng(12);
    auto x = random_tensor<float>({2, 4, 8, 8}, rng);
    CHECK(blk.forward(x, true).values() == x.values());
  }
  SUBCASE("shape preserved at stride 1 with equal widths") {
    BlockHarness h;
    PyramidBasicBlock blk(4, 4, 1, "p", h.reg);
    Rng rng(13);
    auto x = random_tensor<float>({2, 4, 8, 8}, rng);
    CHECK(blk.forward(x, false).shape() == x.shape());
  }
  SUBCASE("forward matches an independently traced oracle") {
    BlockHarness h(77);
    PyramidBasicBlock blk(2, 3, 1, "p", h.reg);
    Rng rng(14);
    auto x = random_tensor<float>({1, 2, 4, 4}, rng);
    auto out = blk.forward(x, true);

    // trace: BN1 -> conv1 3x3 -> BN2 -> ReLU -> conv2 3x3 -> BN3, + zero-padded input
    auto bn_oracle = [](const std::vector<double>& in, int64_t C, int64_t plane) {
      std::vector<double> out_v(in.size());
      for (int64_t c = 0; c < C; ++c) {
        double mean = 0, var = 0;
        for (int64_t i = 0; i < plane; ++i) mean += in[c * plane + i];
        mean /= plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = in[c * plane + i] - mean;
          var += d * d;
        }
        var /= plane;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (int64_t i = 0; i < plane; ++i) out_v[c * plane + i] = (in[c * plane + i] - mean) * inv;
      }
      return out_v;
    };
    auto conv_oracle = [&](const std::vector<double>& in, int64_t ci, int64_t co,
                           const std::vector<float>& w) {
      std::vector<double> out_v(static_cast<size_t>(co * 16), 0.0);
      for (int64_t o = 0; o < co; ++o)
        for (int64_t ic = 0; ic < ci; ++ic)
          for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 4; ++xx) {
              double acc = 0;
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int sy = y + ky - 1, sx = xx + kx - 1;
                  if (sy < 0 || sy > 3 || sx < 0 || sx > 3) continue;
                  acc += in[(ic * 16) + sy * 4 + sx] *
                         w[((o * ci + ic) * 3 + ky) * 3 + kx];
                }
              out_v[o * 16 + y * 4 + xx] += acc;
            }
      return out_v;
    };

    std::vector<double> h0(x.values().begin(), x.values().end());
    auto h1 = bn_oracle(h0, 2, 16);
    auto h2 = conv_oracle(h1, 2, 3, h.params.find("p.conv1.w")->tensor.values());
    auto h3 = bn_oracle(h2, 3, 16);
    for (auto& v : h3) v = std::max(0.0, v);
    auto h4 = conv_oracle(h3, 3, 3, h.params.find("p.conv2.w")->tensor.values());
    auto h5 = bn_oracle(h4, 3, 16);
    // residual: zero-pad 2 -> 3 channels
    for (int64_t i = 0; i < 32; ++i) h5[i] += h0[i];

    REQUIRE(out.numel() == static_cast<int64_t>(h5.size()));
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(out.data()[i] == doctest::Approx(h5[i]).epsilon(1e-4));
  }
}

TEST_CASE("dense bottleneck produces k new maps") {
  BlockHarness h;
  DenseBottleneckBlock blk(24, 12, "d", h.reg);
  Rng rng(15);
  auto x = random_tensor<float>({2, 24, 8, 8}, rng);
  auto out = blk.forward(x, true);
  CHECK(out.shape() == std::vector<int64_t>{2, 12, 8, 8});

  // parameter count at d_in=24, k=12 with batch-norm affine terms
  CHECK(h.params.total_size() == 24 * 48 + 2 * 24 + 48 * 12 * 9 + 2 * 48);
  CHECK(h.params.total_size() == 6480);

  SUBCASE("zero final conv yields all-zero maps; concatenation still widens") {
    auto* p = h.params.find("d.conv2.w");
    std::fill(p->tensor.values().begin(), p->tensor.values().end(), 0.0f);
    auto z = blk.forward(x, true);
    for (float v : z.values()) CHECK(v == 0.0f);
    auto grown = concat_channels(x, z);
    CHECK(grown.dim(1) == 36);
  }
}

TEST_SUITE_END();
