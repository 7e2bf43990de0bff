#pragma once

#include <map>
#include <string>

#include "minnet/model.hpp"
#include "minnet/trainer.hpp"

namespace minnet {

// Merged model + training + path options shared by all CLI commands.
// Serialized as flat UTF-8 key=value text with '#' comments; command-line
// flags take precedence over file keys.
struct RunConfig {
  ModelSpec model;
  TrainConfig training;
  std::string preset;        // "", "resnet", "densenet"
  std::string data_dir;      // canonical binary batches
  std::string out_dir = "out";
  std::string checkpoint;    // input checkpoint for eval/robustness/probe
  bool synthetic = false;    // use the seeded synthetic dataset
  int synth_train = 5000;
  int synth_test = 1000;
};

std::map<std::string, std::string> parse_config_file(const std::string& path);

// Applies one key=value pair; unknown keys are errors.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

void load_config_file(RunConfig& cfg, const std::string& path);

// Fixed key order, suitable for echoing the effective config.
std::string serialize_config(const RunConfig& cfg);

std::string family_name(Family f);
std::string lr_drops_to_string(const std::vector<LrDrop>& drops);
std::vector<LrDrop> parse_lr_drops(const std::string& text);

}  // namespace minnet
