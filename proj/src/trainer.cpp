#include "minnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "minnet/ops.hpp"

namespace minnet {

TrainConfig resnet_preset() {
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 128;
  cfg.lr0 = 0.1;
  cfg.lr_drops = {{100, 10.0}, {150, 10.0}};
  cfg.weight_decay = 1e-4;
  cfg.momentum = 0.9;
  cfg.nesterov = false;
  cfg.augmentation = true;
  return cfg;
}

TrainConfig densenet_preset() {
  TrainConfig cfg = resnet_preset();
  cfg.epochs = 300;
  cfg.batch_size = 64;
  cfg.lr_drops = {{150, 10.0}, {225, 10.0}};
  cfg.nesterov = true;
  return cfg;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
  double lr = cfg.lr0;
  for (const auto& d : cfg.lr_drops)
    if (epoch >= d.epoch) lr /= d.divisor;
  return lr;
}

OptimState make_optim_state(const ParamStore& params) {
  OptimState st;
  st.velocity.reserve(params.size());
  for (const auto& p : params.items())
    st.velocity.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
  return st;
}

void sgd_step(ParamStore& params, OptimState& state, double lr, const TrainConfig& cfg) {
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: optimizer state does not match parameter store");
  const float flr = static_cast<float>(lr);
  const float mu = static_cast<float>(cfg.momentum);
  const float lambda = static_cast<float>(cfg.weight_decay);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params.items()[pi];
    auto& w = p.tensor.values();
    auto& g = p.tensor.grad();  // allocates zeros if backward never touched it
    auto& v = state.velocity[pi];
    const bool decay = p.decay_eligible && lambda != 0.0f;
    for (size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("sgd_step: non-finite gradient in " + p.name);
      float gi = g[i];
      if (decay) gi += lambda * w[i];
      v[i] = mu * v[i] + gi;
      w[i] -= cfg.nesterov ? flr * (gi + mu * v[i]) : flr * v[i];
    }
  }
}

Tensor normalize_record(const ImageRecord& rec, const ChannelStats& stats) {
  Tensor t({1, 3, ImageRecord::kSide, ImageRecord::kSide});
  float* p = t.data();
  for (int c = 0; c < 3; ++c) {
    const float mean = static_cast<float>(stats.mean[c]);
    const float inv_std = static_cast<float>(1.0 / stats.std[c]);
    for (int i = 0; i < ImageRecord::kPixelsPerChannel; ++i)
      p[c * ImageRecord::kPixelsPerChannel + i] =
          (rec.pixels[c * ImageRecord::kPixelsPerChannel + i] / 255.0f - mean) * inv_std;
  }
  return t;
}

Tensor augment_record(const ImageRecord& rec, const ChannelStats& stats, bool flip, int dx,
                      int dy) {
  if (dx < 0 || dx > 8 || dy < 0 || dy > 8)
    throw std::invalid_argument("augment: crop offset out of range");
  constexpr int S = ImageRecord::kSide;
  Tensor t({1, 3, S, S});
  float* p = t.data();
  for (int c = 0; c < 3; ++c) {
    const float mean = static_cast<float>(stats.mean[c]);
    const float inv_std = static_cast<float>(1.0 / stats.std[c]);
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        // position in the 4-pixel zero-padded source
        const int sy = y + dy - 4;
        int sx = x + dx - 4;
        float v = 0.0f;
        if (sy >= 0 && sy < S && sx >= 0 && sx < S) {
          if (flip) sx = S - 1 - sx;
          v = rec.at(c, sy, sx) / 255.0f;
        }
        p[(c * S + y) * S + x] = (v - mean) * inv_std;
      }
    }
  }
  return t;
}

Tensor augment(const ImageRecord& rec, const ChannelStats& stats, Rng& rng) {
  const bool flip = rng.uniform() < 0.5;
  const int dy = rng.uniform_int(0, 8);
  const int dx = rng.uniform_int(0, 8);
  return augment_record(rec, stats, flip, dx, dy);
}

namespace {

// Stacks per-record tensors into one batch (records indexed by perm[lo, hi)).
Tensor make_batch(const std::vector<ImageRecord>& records, const std::vector<int>& perm,
                  size_t lo, size_t hi, const ChannelStats& stats, bool augmenting, Rng* aug_rng,
                  std::vector<int>& labels_out) {
  const int64_t b = static_cast<int64_t>(hi - lo);
  constexpr int64_t S = ImageRecord::kSide;
  Tensor batch({b, 3, S, S});
  labels_out.resize(static_cast<size_t>(b));
  for (size_t i = lo; i < hi; ++i) {
    const ImageRecord& rec = records[static_cast<size_t>(perm[i])];
    Tensor one = augmenting ? augment(rec, stats, *aug_rng) : normalize_record(rec, stats);
    std::copy_n(one.data(), 3 * S * S, batch.data() + static_cast<int64_t>(i - lo) * 3 * S * S);
    labels_out[i - lo] = rec.label;
  }
  return batch;
}

}  // namespace

EvalResult evaluate(Model& model, const std::vector<ImageRecord>& records,
                    const ChannelStats& stats, int batch_size) {
  EvalResult res;
  res.predictions.reserve(records.size());
  std::vector<int> identity(records.size());
  std::iota(identity.begin(), identity.end(), 0);
  size_t wrong = 0;
  std::vector<int> labels;
  for (size_t lo = 0; lo < records.size(); lo += static_cast<size_t>(batch_size)) {
    const size_t hi = std::min(records.size(), lo + static_cast<size_t>(batch_size));
    Tensor x = make_batch(records, identity, lo, hi, stats, false, nullptr, labels);
    Tensor logits = model.forward(x, /*training=*/false);
    auto preds = argmax_rows(logits);
    for (size_t i = 0; i < preds.size(); ++i) {
      res.predictions.push_back(preds[i]);
      if (preds[i] != labels[i]) ++wrong;
    }
  }
  res.error = records.empty() ? 0.0 : static_cast<double>(wrong) / records.size();
  return res;
}

ParamSnapshot snapshot(Model& model) {
  ParamSnapshot s;
  for (const auto& p : model.params().items()) s.params.push_back(p.tensor.values());
  for (const auto& b : model.buffers()) s.buffers.push_back(*b.data);
  return s;
}

void restore(Model& model, const ParamSnapshot& snap) {
  auto& items = model.params().items();
  if (snap.params.size() != items.size())
    throw std::invalid_argument("restore: parameter count mismatch");
  for (size_t i = 0; i < items.size(); ++i) items[i].tensor.values() = snap.params[i];
  auto buffers = model.buffers();
  if (snap.buffers.size() != buffers.size())
    throw std::invalid_argument("restore: buffer count mismatch");
  for (size_t i = 0; i < buffers.size(); ++i) *buffers[i].data = snap.buffers[i];
}

TrainResult train(Model& model, const std::vector<ImageRecord>& train_set,
                  const std::vector<ImageRecord>& test_set, const TrainConfig& cfg) {
  TrainResult result;
  if (cfg.epochs == 0) return result;
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");

  const ChannelStats stats = compute_channel_stats(train_set);
  Rng shuffle_rng(derive_seed(cfg.seed, RngStream::shuffle));
  Rng aug_rng(derive_seed(cfg.seed, RngStream::augment));
  OptimState opt = make_optim_state(model.params());

  std::vector<int> perm(train_set.size());
  std::iota(perm.begin(), perm.end(), 0);

  ParamSnapshot last_good = snapshot(model);
  bool stop = false;

  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    shuffle_rng.shuffle(perm);

    double loss_sum = 0.0;
    size_t seen = 0;
    std::vector<int> labels;
    for (size_t lo = 0; lo < train_set.size() && !stop; lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t hi = std::min(train_set.size(), lo + static_cast<size_t>(cfg.batch_size));
      Tensor x = make_batch(train_set, perm, lo, hi, stats, cfg.augmentation, &aug_rng, labels);

      model.params().zero_grads();
      Tape tape;
      float loss_value;
      {
        TapeScope<float> scope(tape);
        Tensor logits = model.forward(x, /*training=*/true);
        Tensor loss = softmax_cross_entropy(logits, labels);
        loss_value = loss.data()[0];
        if (!std::isfinite(loss_value)) {
          restore(model, last_good);
          result.diverged = true;
          stop = true;
          break;
        }
        tape.backward(loss);
      }
      try {
        sgd_step(model.params(), opt, lr, cfg);
      } catch (const std::runtime_error&) {
        restore(model, last_good);
        result.diverged = true;
        stop = true;
        break;
      }
      loss_sum += static_cast<double>(loss_value) * static_cast<double>(hi - lo);
      seen += hi - lo;
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) stop = true;
    }
    if (result.diverged) break;

    EvalResult ev = evaluate(model, test_set, stats, cfg.batch_size);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, lr, seen ? loss_sum / seen : 0.0, ev.error, seconds});
    result.final_test_error = ev.error;
    if (result.best_epoch < 0 || ev.error < result.best_test_error) {
      result.best_test_error = ev.error;
      result.best_epoch = epoch;
      result.best = snapshot(model);
    }
    last_good = snapshot(model);
  }
  return result;
}

void write_train_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write log: " + path);
  out << "epoch,lr,train_loss,test_error,seconds\n";
  char line[160];
  for (const auto& e : log) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.lr, e.train_loss,
                  e.test_error, e.seconds);
    out << line;
  }
}

}  // namespace minnet
