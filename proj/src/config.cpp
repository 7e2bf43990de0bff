#include "minnet/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace minnet {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean value: " + v);
}

}  // namespace

std::string family_name(Family f) {
  return f == Family::pyramid_resnet ? "pyramid_resnet" : "densenet_bc";
}

std::string lr_drops_to_string(const std::vector<LrDrop>& drops) {
  std::ostringstream out;
  for (size_t i = 0; i < drops.size(); ++i) {
    if (i) out << ",";
    out << drops[i].epoch << ":" << drops[i].divisor;
  }
  return out.str();
}

std::vector<LrDrop> parse_lr_drops(const std::string& text) {
  std::vector<LrDrop> drops;
  if (trim(text).empty()) return drops;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("config: lr drop must be epoch:divisor, got " + item);
    drops.push_back({std::stoi(trim(item.substr(0, colon))),
                     std::stod(trim(item.substr(colon + 1)))});
  }
  for (size_t i = 1; i < drops.size(); ++i)
    if (drops[i].epoch < drops[i - 1].epoch)
      throw std::invalid_argument("config: lr drops must be sorted by epoch");
  return drops;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "family") {
    if (value == "pyramid_resnet" || value == "resnet" || value == "pyramid")
      cfg.model.family = Family::pyramid_resnet;
    else if (value == "densenet_bc" || value == "densenet")
      cfg.model.family = Family::densenet_bc;
    else
      throw std::invalid_argument("config: unknown family: " + value);
  } else if (key == "n") {
    cfg.model.n = std::stoi(value);
  } else if (key == "k") {
    cfg.model.k = std::stoi(value);
  } else if (key == "alpha") {
    cfg.model.alpha = std::stoi(value);
  } else if (key == "q") {
    cfg.model.q = std::stoi(value);
  } else if (key == "num_classes") {
    cfg.model.num_classes = std::stoi(value);
  } else if (key == "base_channels") {
    cfg.model.base_channels = std::stoi(value);
  } else if (key == "min") {
    cfg.model.min_substitution = parse_bool(value);
  } else if (key == "seed") {
    cfg.model.seed = std::stoull(value);
    cfg.training.seed = cfg.model.seed;
  } else if (key == "rounding") {
    if (value == "round")
      cfg.model.widen_rounding = WidenRounding::round;
    else if (value == "floor")
      cfg.model.widen_rounding = WidenRounding::floor;
    else
      throw std::invalid_argument("config: rounding must be round or floor");
  } else if (key == "epochs") {
    cfg.training.epochs = std::stoi(value);
  } else if (key == "batch_size") {
    cfg.training.batch_size = std::stoi(value);
  } else if (key == "lr") {
    cfg.training.lr0 = std::stod(value);
  } else if (key == "lr_drops") {
    cfg.training.lr_drops = parse_lr_drops(value);
  } else if (key == "weight_decay") {
    cfg.training.weight_decay = std::stod(value);
  } else if (key == "momentum") {
    cfg.training.momentum = std::stod(value);
  } else if (key == "nesterov") {
    cfg.training.nesterov = parse_bool(value);
  } else if (key == "augment") {
    cfg.training.augmentation = parse_bool(value);
  } else if (key == "max_steps") {
    cfg.training.max_steps = std::stoi(value);
  } else if (key == "preset") {
    cfg.preset = value;
  } else if (key == "data_dir") {
    cfg.data_dir = value;
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint = value;
  } else if (key == "synthetic") {
    cfg.synthetic = parse_bool(value);
  } else if (key == "synth_train") {
    cfg.synth_train = std::stoi(value);
  } else if (key == "synth_test") {
    cfg.synth_test = std::stoi(value);
  } else {
    throw std::invalid_argument("config: unknown key: " + key);
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  for (const auto& [k, v] : parse_config_file(path)) apply_config_key(cfg, k, v);
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "family=" << family_name(cfg.model.family) << "\n";
  out << "n=" << cfg.model.n << "\n";
  out << "k=" << cfg.model.k << "\n";
  out << "alpha=" << cfg.model.alpha << "\n";
  out << "q=" << cfg.model.q << "\n";
  out << "num_classes=" << cfg.model.num_classes << "\n";
  out << "base_channels=" << cfg.model.base_channels << "\n";
  out << "min=" << (cfg.model.min_substitution ? 1 : 0) << "\n";
  out << "seed=" << cfg.model.seed << "\n";
  out << "rounding=" << (cfg.model.widen_rounding == WidenRounding::round ? "round" : "floor")
      << "\n";
  out << "epochs=" << cfg.training.epochs << "\n";
  out << "batch_size=" << cfg.training.batch_size << "\n";
  out << "lr=" << cfg.training.lr0 << "\n";
  out << "lr_drops=" << lr_drops_to_string(cfg.training.lr_drops) << "\n";
  out << "weight_decay=" << cfg.training.weight_decay << "\n";
  out << "momentum=" << cfg.training.momentum << "\n";
  out << "nesterov=" << (cfg.training.nesterov ? 1 : 0) << "\n";
  out << "augment=" << (cfg.training.augmentation ? 1 : 0) << "\n";
  out << "max_steps=" << cfg.training.max_steps << "\n";
  out << "preset=" << cfg.preset << "\n";
  out << "data_dir=" << cfg.data_dir << "\n";
  out << "out_dir=" << cfg.out_dir << "\n";
  out << "checkpoint=" << cfg.checkpoint << "\n";
  out << "synthetic=" << (cfg.synthetic ? 1 : 0) << "\n";
  out << "synth_train=" << cfg.synth_train << "\n";
  out << "synth_test=" << cfg.synth_test << "\n";
  return out.str();
}

}  // namespace minnet
