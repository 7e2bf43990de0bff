#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "minnet/dataset.hpp"
#include "minnet/model.hpp"
#include "minnet/rng.hpp"

namespace minnet {

struct LrDrop {
  int epoch;
  double divisor;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  double lr0 = 0.1;
  std::vector<LrDrop> lr_drops;  // sorted by epoch
  double weight_decay = 1e-4;
  double momentum = 0.9;
  bool nesterov = false;
  uint64_t seed = 0;
  bool augmentation = true;
  int max_steps = 0;  // 0 = unlimited; nonzero caps the number of SGD steps
};

// 200 epochs, batch 128, lr 0.1 divided by ten after 100 and 150 epochs,
// weight decay 1e-4, momentum 0.9.
TrainConfig resnet_preset();

// 300 epochs, batch 64, drops after 150 and 225 epochs, Nesterov momentum.
TrainConfig densenet_preset();

// Piecewise-constant schedule; each drop applies from its epoch onwards.
double lr_at(int epoch, const TrainConfig& cfg);

struct OptimState {
  std::vector<std::vector<float>> velocity;  // aligned to ParamStore order
};

OptimState make_optim_state(const ParamStore& params);

// g <- grad (+ lambda * w for decay-eligible tensors); v <- mu * v + g;
// w <- w - lr * v, or w <- w - lr * (g + mu * v) with Nesterov momentum.
// Throws on non-finite gradients, naming the parameter.
void sgd_step(ParamStore& params, OptimState& state, double lr, const TrainConfig& cfg);

// Plain normalization: (byte/255 - mean) / std per channel.
Tensor normalize_record(const ImageRecord& rec, const ChannelStats& stats);

// Deterministic core: optional horizontal flip, 4-pixel zero padding,
// 32x32 crop at offset (dy, dx) in [0, 8]^2, then normalization.
Tensor augment_record(const ImageRecord& rec, const ChannelStats& stats, bool flip, int dx,
                      int dy);

// Sampling wrapper; draws flip, dy, dx from the stream in that order.
Tensor augment(const ImageRecord& rec, const ChannelStats& stats, Rng& rng);

struct EvalResult {
  double error = 1.0;
  std::vector<int> predictions;  // aligned to record order
};

EvalResult evaluate(Model& model, const std::vector<ImageRecord>& records,
                    const ChannelStats& stats, int batch_size);

struct EpochLog {
  int epoch;
  double lr;
  double train_loss;
  double test_error;
  double seconds;
};

struct ParamSnapshot {
  std::vector<std::vector<float>> params;
  std::vector<std::vector<float>> buffers;
};

ParamSnapshot snapshot(Model& model);
void restore(Model& model, const ParamSnapshot& snap);

struct TrainResult {
  std::vector<EpochLog> log;
  double final_test_error = 1.0;
  double best_test_error = 1.0;
  int best_epoch = -1;
  int steps = 0;
  bool diverged = false;
  ParamSnapshot best;  // lowest test error seen over all epochs
};

// Epoch loop with seeded shuffling, training-only augmentation and
// batch-norm in training mode. No early stopping: the model keeps its
// final parameters; the best-epoch snapshot is reported separately.
// On divergence the model is restored to the last completed epoch.
TrainResult train(Model& model, const std::vector<ImageRecord>& train_set,
                  const std::vector<ImageRecord>& test_set, const TrainConfig& cfg);

void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace minnet
