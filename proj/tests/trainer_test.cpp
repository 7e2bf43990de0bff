#include <cmath>

#include "doctest.h"
#include "minnet/model.hpp"
#include "minnet/trainer.hpp"
#include "test_util.hpp"

using namespace minnet;

namespace {

ModelSpec tiny_spec(uint64_t seed) {
  ModelSpec spec;
  spec.family = Family::pyramid_resnet;
  spec.n = 1;
  spec.alpha = 3;
  spec.base_channels = 4;
  spec.min_substitution = true;
  spec.seed = seed;
  return spec;
}

ParamStore single_param_store(std::vector<float> w, bool decay = true) {
  ParamStore store;
  store.add("p.w", Tensor::from_values({static_cast<int64_t>(w.size())}, std::move(w)), decay);
  return store;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("plain sgd reduces to w -= lr * grad") {
  auto store = single_param_store({1.0f, 2.0f});
  store.items()[0].tensor.grad() = {0.5f, -1.0f};
  TrainConfig cfg;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  OptimState opt = make_optim_state(store);
  sgd_step(store, opt, 0.1, cfg);
  CHECK(store.items()[0].tensor.values()[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(store.items()[0].tensor.values()[1] == doctest::Approx(2.0 + 0.1));
}

TEST_CASE("two momentum steps with constant gradient") {
  auto store = single_param_store({0.0f});
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  OptimState opt = make_optim_state(store);
  const float g = 0.2f;
  for (int step = 0; step < 2; ++step) {
    store.items()[0].tensor.grad() = {g};
    sgd_step(store, opt, 0.1, cfg);
  }
  // v1 = g, v2 = 1.9 g; total displacement lr*g*(1 + 1.9)
  CHECK(store.items()[0].tensor.values()[0] == doctest::Approx(-0.1 * 0.2 * 2.9).epsilon(1e-6));
}

TEST_CASE("nesterov update uses the lookahead gradient") {
  auto store = single_param_store({1.0f});
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.nesterov = true;
  OptimState opt = make_optim_state(store);
  store.items()[0].tensor.grad() = {1.0f};
  sgd_step(store, opt, 0.1, cfg);
  // v = g; w -= lr * (g + mu * v) = 0.1 * 1.9
  CHECK(store.items()[0].tensor.values()[0] == doctest::Approx(1.0 - 0.19).epsilon(1e-6));
}

TEST_CASE("non-finite gradients abort the step naming the parameter") {
  auto store = single_param_store({1.0f});
  store.items()[0].tensor.grad() = {std::numeric_limits<float>::quiet_NaN()};
  TrainConfig cfg;
  OptimState opt = make_optim_state(store);
  CHECK_THROWS_WITH_AS(sgd_step(store, opt, 0.1, cfg),
                       "sgd_step: non-finite gradient in p.w", std::runtime_error);
}

TEST_CASE("learning-rate schedule presets") {
  const TrainConfig resnet = resnet_preset();
  CHECK(lr_at(99, resnet) == doctest::Approx(0.1));
  CHECK(lr_at(100, resnet) == doctest::Approx(0.01));
  CHECK(lr_at(150, resnet) == doctest::Approx(0.001));
  CHECK(resnet.batch_size == 128);
  CHECK(resnet.epochs == 200);
  CHECK_FALSE(resnet.nesterov);

  const TrainConfig densenet = densenet_preset();
  CHECK(lr_at(149, densenet) == doctest::Approx(0.1));
  CHECK(lr_at(150, densenet) == doctest::Approx(0.01));
  CHECK(lr_at(225, densenet) == doctest::Approx(0.001));
  CHECK(densenet.batch_size == 64);
  CHECK(densenet.epochs == 300);
  CHECK(densenet.nesterov);

  TrainConfig flat;
  flat.lr0 = 0.05;
  CHECK(lr_at(0, flat) == doctest::Approx(0.05));
  CHECK(lr_at(500, flat) == doctest::Approx(0.05));

  // non-increasing over the paper presets
  for (const auto& cfg : {resnet, densenet})
    for (int e = 1; e < cfg.epochs; ++e) CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));

  CHECK_THROWS_AS(lr_at(-1, flat), std::invalid_argument);
}

TEST_CASE("augmentation core cases") {
  auto records = synthetic_dataset(8, 4, 5);
  auto stats = compute_channel_stats(records);
  const auto& rec = records[0];

  SUBCASE("no flip + center crop recovers the normalized image") {
    auto plain = normalize_record(rec, stats);
    auto centered = augment_record(rec, stats, false, 4, 4);
    CHECK(plain.values() == centered.values());
  }
  SUBCASE("corner crop exposes the zero padding") {
    auto out = augment_record(rec, stats, false, 0, 0);
    for (int c = 0; c < 3; ++c) {
      const float pad_value = static_cast<float>((0.0 - stats.mean[c]) / stats.std[c]);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          CHECK(out.data()[(c * 32 + i) * 32 + j] == doctest::Approx(pad_value));
    }
  }
  SUBCASE("flip mirrors horizontally") {
    auto flipped = augment_record(rec, stats, true, 4, 4);
    auto plain = normalize_record(rec, stats);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          CHECK(flipped.data()[(c * 32 + y) * 32 + x] ==
                plain.data()[(c * 32 + y) * 32 + (31 - x)]);
  }
  SUBCASE("flip frequency is close to one half") {
    Rng rng(derive_seed(7, RngStream::augment));
    int flips = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      // same draw order as augment(): flip, dy, dx
      if (rng.uniform() < 0.5) ++flips;
      rng.uniform_int(0, 8);
      rng.uniform_int(0, 8);
    }
    const double freq = static_cast<double>(flips) / draws;
    CHECK(freq > 0.48);
    CHECK(freq < 0.52);
  }
  SUBCASE("offsets outside the padded window are rejected") {
    CHECK_THROWS_AS(augment_record(rec, stats, false, 9, 0), std::invalid_argument);
  }
}

TEST_CASE("zero epochs leave the model untouched") {
  Model m = build(tiny_spec(3));
  auto before = snapshot(m);
  auto data = testutil::test_corpus(32, 16);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto result = train(m, data.train, data.test, cfg);
  CHECK(result.log.empty());
  auto after = snapshot(m);
  CHECK(before.params == after.params);
  CHECK(before.buffers == after.buffers);
}

TEST_CASE("training is deterministic per seed") {
  auto data = testutil::test_corpus(64, 32);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.lr0 = 0.05;
  cfg.seed = 11;

  auto run = [&]() {
    Model m = build(tiny_spec(11));
    auto result = train(m, data.train, data.test, cfg);
    return std::pair{snapshot(m), result};
  };
  auto [snap_a, res_a] = run();
  auto [snap_b, res_b] = run();
  CHECK(snap_a.params == snap_b.params);
  CHECK(snap_a.buffers == snap_b.buffers);
  REQUIRE(res_a.log.size() == res_b.log.size());
  for (size_t i = 0; i < res_a.log.size(); ++i) {
    CHECK(res_a.log[i].train_loss == res_b.log[i].train_loss);
    CHECK(res_a.log[i].test_error == res_b.log[i].test_error);
    CHECK(res_a.log[i].lr == res_b.log[i].lr);
  }
}

TEST_CASE("evaluation never mutates running statistics") {
  Model m = build(tiny_spec(5));
  auto data = testutil::test_corpus(32, 32);
  auto stats = compute_channel_stats(data.train);
  auto before = snapshot(m);
  evaluate(m, data.test, stats, 8);
  auto after = snapshot(m);
  CHECK(before.buffers == after.buffers);
  CHECK(before.params == after.params);
}

TEST_CASE("divergence restores the last completed epoch") {
  Model m = build(tiny_spec(7));
  auto data = testutil::test_corpus(32, 16);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.lr0 = 1e9;  // blows up within the first epoch
  cfg.seed = 7;
  auto init = snapshot(m);
  auto result = train(m, data.train, data.test, cfg);
  CHECK(result.diverged);
  auto restored = snapshot(m);
  CHECK(restored.params == init.params);
}

TEST_CASE("training log csv layout") {
  testutil::TempDir tmp;
  std::vector<EpochLog> log = {{0, 0.1, 1.5, 0.9, 2.0}, {1, 0.1, 1.2, 0.8, 2.1}};
  const auto path = tmp.str("log.csv");
  write_train_log_csv(path, log);
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  CHECK(header == "epoch,lr,train_loss,test_error,seconds");
  int rows = 0;
  while (std::getline(in, row)) ++rows;
  CHECK(rows == 2);
}

TEST_SUITE_END();
