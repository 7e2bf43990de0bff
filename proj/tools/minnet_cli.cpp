// Command-line front end: train / eval / robustness / probe / count-params.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "minnet/checkpoint.hpp"
#include "minnet/config.hpp"
#include "minnet/dataset.hpp"
#include "minnet/evaluation.hpp"
#include "minnet/model.hpp"
#include "minnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace minnet;

namespace {

// Dataset source resolution: explicit dir flag/key, then the environment
// override, then the synthetic generator if requested.
Cifar10 load_dataset(const RunConfig& cfg) {
  std::string dir = cfg.data_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("MINNET_DATA_DIR")) dir = env;
  }
  if (!dir.empty()) return load_cifar10(dir);
  if (!cfg.synthetic)
    throw std::runtime_error(
        "no dataset: pass --data-dir (or MINNET_DATA_DIR) or use --synthetic");
  const uint64_t ds = derive_seed(cfg.model.seed, RngStream::data);
  Cifar10 data;
  data.train = synthetic_dataset(cfg.synth_train, cfg.model.num_classes, ds);
  data.test = synthetic_dataset(cfg.synth_test, cfg.model.num_classes, splitmix64(ds + 1));
  return data;
}

void echo_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "effective.cfg", std::ios::trunc);
  out << serialize_config(cfg);
}

void apply_preset(RunConfig& cfg) {
  if (cfg.preset.empty()) return;
  const TrainConfig keep = cfg.training;
  if (cfg.preset == "resnet")
    cfg.training = resnet_preset();
  else if (cfg.preset == "densenet")
    cfg.training = densenet_preset();
  else
    throw std::runtime_error("unknown preset: " + cfg.preset);
  cfg.training.seed = keep.seed;
}

int cmd_train(RunConfig cfg) {
  echo_config(cfg);
  Cifar10 data = load_dataset(cfg);
  Model model = build(cfg.model);
  std::printf("model: %s, %lld parameters\n", family_name(cfg.model.family).c_str(),
              static_cast<long long>(model.count_params()));

  TrainResult result = train(model, data.train, data.test, cfg.training);

  const fs::path out(cfg.out_dir);
  write_train_log_csv((out / "train_log.csv").string(), result.log);
  save_checkpoint((out / "final.ckpt").string(),
                  checkpoint_from_model(model, static_cast<uint32_t>(result.log.size())));
  if (result.best_epoch >= 0)
    save_checkpoint((out / "best.ckpt").string(),
                    checkpoint_from_snapshot(model, result.best,
                                             static_cast<uint32_t>(result.best_epoch)));
  if (result.diverged) {
    std::fprintf(stderr, "training diverged after %d steps; last good state saved\n",
                 result.steps);
    return 1;
  }
  std::printf("final test error: %.4f\n", result.final_test_error);
  if (result.best_epoch >= 0)
    std::printf("min test error over all epochs: %.4f (epoch %d)\n", result.best_test_error,
                result.best_epoch);
  return 0;
}

Model model_from_config(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw std::runtime_error("missing --checkpoint");
  return model_from_checkpoint(load_checkpoint(cfg.checkpoint));
}

int cmd_eval(RunConfig cfg) {
  echo_config(cfg);
  Cifar10 data = load_dataset(cfg);
  Model model = model_from_config(cfg);
  const ChannelStats stats = compute_channel_stats(data.train);
  EvalResult res = evaluate(model, data.test, stats, cfg.training.batch_size);
  write_predictions_csv((fs::path(cfg.out_dir) / "predictions.csv").string(), data.test,
                        res.predictions);
  std::printf("test error: %.4f\n", res.error);
  return 0;
}

int cmd_robustness(RunConfig cfg) {
  echo_config(cfg);
  Cifar10 data = load_dataset(cfg);
  Model model = model_from_config(cfg);
  const ChannelStats stats = compute_channel_stats(data.train);
  const fs::path out(cfg.out_dir);
  const std::string cache_dir = (out / "sq_cache").string();

  EvalResult base = evaluate(model, data.test, stats, cfg.training.batch_size);
  PredictionSet base_set{"", 100, base.predictions};
  write_predictions_csv((out / "preds_q100.csv").string(), data.test, base.predictions);

  std::vector<RobustnessRow> rows{{100, base.error, 0.0}};
  for (int q = 90; q >= 10; q -= 10) {
    bool hit = false;
    auto sq = build_sq(data.test, q, cache_dir, &hit);
    std::printf("S_%d: %s\n", q, hit ? "cache hit" : "generated");
    EvalResult r = evaluate(model, sq, stats, cfg.training.batch_size);
    PredictionSet q_set{"", q, r.predictions};
    rows.push_back({q, r.error, pocp(base_set, q_set)});
    write_predictions_csv((out / ("preds_q" + std::to_string(q) + ".csv")).string(), sq,
                          r.predictions);
  }
  write_robustness_csv((out / "robustness.csv").string(), rows);
  for (const auto& r : rows) std::printf("Q=%3d  error=%.4f  pocp=%.4f\n", r.quality, r.error, r.pocp);
  return 0;
}

int cmd_probe(RunConfig cfg, const std::string& selector) {
  echo_config(cfg);
  Model model = cfg.checkpoint.empty() ? build(cfg.model)
                                       : model_from_checkpoint(load_checkpoint(cfg.checkpoint));
  const double eps[] = {0.05, 0.1};
  ProbeSummary summary = probe_model(model, selector, eps);
  write_probe_csv((fs::path(cfg.out_dir) / "probe.csv").string(), summary.reports);
  std::printf("probed %zu channels: %.1f%% non-degenerate, %.1f%% of those hyperselective\n",
              summary.reports.size(), 100.0 * summary.fraction_non_degenerate(),
              100.0 * summary.fraction_hyperselective());
  return 0;
}

int cmd_count_params(const RunConfig& cfg) {
  Model model = build(cfg.model);
  std::printf("%lld\n", static_cast<long long>(model.count_params()));
  return 0;
}

void add_model_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option_function<std::string>(
      "--family", [&cfg](const std::string& v) { apply_config_key(cfg, "family", v); },
      "pyramid_resnet | densenet_bc");
  cmd->add_option("--n", cfg.model.n, "blocks per stack");
  cmd->add_option("--k", cfg.model.k, "DenseNet growth rate");
  cmd->add_option("--alpha", cfg.model.alpha, "PyramidNet widening total");
  cmd->add_option("--q", cfg.model.q, "Min-block expansion factor");
  cmd->add_option("--num-classes", cfg.model.num_classes);
  cmd->add_option("--base-channels", cfg.model.base_channels, "PyramidNet initial width");
  cmd->add_flag("--min", cfg.model.min_substitution, "substitute the first block of each stack");
  cmd->add_option_function<uint64_t>(
      "--seed",
      [&cfg](uint64_t v) {
        cfg.model.seed = v;
        cfg.training.seed = v;
      },
      "run seed (init/shuffle/augment streams derive from it)");
}

void add_data_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--data-dir", cfg.data_dir, "directory with the binary batch files");
  cmd->add_flag("--synthetic", cfg.synthetic, "use the seeded synthetic dataset");
  cmd->add_option("--synth-train", cfg.synth_train);
  cmd->add_option("--synth-test", cfg.synth_test);
  cmd->add_option("--out", cfg.out_dir, "output directory");
}

void add_train_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--epochs", cfg.training.epochs);
  cmd->add_option("--batch-size", cfg.training.batch_size);
  cmd->add_option("--lr", cfg.training.lr0);
  cmd->add_option_function<std::string>(
      "--lr-drops",
      [&cfg](const std::string& v) { cfg.training.lr_drops = parse_lr_drops(v); },
      "comma-separated epoch:divisor pairs");
  cmd->add_option("--weight-decay", cfg.training.weight_decay);
  cmd->add_option("--momentum", cfg.training.momentum);
  cmd->add_flag("--nesterov,!--no-nesterov", cfg.training.nesterov);
  cmd->add_flag("--augment,!--no-augment", cfg.training.augmentation);
  cmd->add_option("--max-steps", cfg.training.max_steps);
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;

  // --config and --preset apply before the remaining flags so that
  // explicit flags always win.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      try {
        load_config_file(cfg, argv[i + 1]);
      } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
      }
    }
  }
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--preset" && i + 1 < argc) cfg.preset = argv[i + 1];
  }
  try {
    apply_preset(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  CLI::App app{"Min-unit network training and JPEG-robustness harness"};
  app.require_subcommand(1);
  std::string config_path, preset_dummy, selector;

  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoints");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test set");
  auto* robust_cmd = app.add_subcommand("robustness", "error and POCP across JPEG qualities");
  auto* probe_cmd = app.add_subcommand("probe", "hyperselectivity probe of Min-block filters");
  auto* count_cmd = app.add_subcommand("count-params", "print the learnable parameter count");

  for (CLI::App* cmd : {train_cmd, eval_cmd, robust_cmd, probe_cmd, count_cmd}) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--preset", preset_dummy, "resnet | densenet training preset");
    add_model_options(cmd, cfg);
  }
  for (CLI::App* cmd : {train_cmd, eval_cmd, robust_cmd}) add_data_options(cmd, cfg);
  add_train_options(train_cmd, cfg);
  for (CLI::App* cmd : {eval_cmd, robust_cmd, probe_cmd})
    cmd->add_option("--checkpoint", cfg.checkpoint, "checkpoint file to load");
  eval_cmd->add_option("--batch-size", cfg.training.batch_size);
  robust_cmd->add_option("--batch-size", cfg.training.batch_size);
  probe_cmd->add_option("--out", cfg.out_dir, "output directory");
  probe_cmd->add_option("--layer", selector, "Min-block name prefix (default: all)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (eval_cmd->parsed()) return cmd_eval(cfg);
    if (robust_cmd->parsed()) return cmd_robustness(cfg);
    if (probe_cmd->parsed()) return cmd_probe(cfg, selector);
    if (count_cmd->parsed()) return cmd_count_params(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
