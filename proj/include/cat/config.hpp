#pragma once

#include <cat/training.hpp>

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace cat {

/// All run settings as plain data. Field initializers are the `desk` preset;
/// every config key maps to exactly one field.
struct RunConfig {
  std::string preset = "desk";

  // dataset
  std::string dataset = "synthetic";  // synthetic | cifar
  std::string data_path;
  int label_bytes = 1;
  int n_synth = 2000;
  std::uint64_t synth_seed = 2024;  // frozen with the generator constants
  double val_fraction = 0.2;
  std::array<double, 3> norm_mean{0.5, 0.5, 0.5};
  std::array<double, 3> norm_std{0.25, 0.25, 0.25};

  // model
  std::vector<int> widths{8, 16, 32};
  int blocks_per_stage = 1;
  int num_classes = 2;
  std::string attention = "cat";  // none | channel | spatial | channel_spatial |
                                  // spatial_channel | cat
  bool interior_factors = true;
  int reduction = 16;
  int gaussian_k = 5;
  double sigma = 1.0;
  std::string fusion = "canonical";  // canonical | pseudocode
  bool signed_normalize = false;
  bool gep = true;

  // training
  int epochs = 10;
  int batch_size = 64;
  double lr = 0.05;
  int drop_every = 5;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  bool augment = false;
  int max_steps = 0;
  std::uint64_t seed = 1;

  // io
  std::string out_dir = "runs/latest";
  std::string ckpt;              // empty: <out_dir>/model.ckpt
  std::string arms = "default";  // ablation arm list, or "default"
  std::string layers = "all";    // export-attn block selector
  int export_count = 4;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    std::string item = trim(s.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(std::move(item));
    pos = comma + 1;
  }
  return out;
}

inline long long parse_int(const std::string& key, const std::string& value) {
  size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  check(used == value.size() && !value.empty(),
        "config key " + key + ": expected an integer, got '" + value + "'");
  return v;
}

inline double parse_double(const std::string& key, const std::string& value) {
  size_t used = 0;
  double v = 0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  check(used == value.size() && !value.empty(),
        "config key " + key + ": expected a number, got '" + value + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config key " + key + ": expected true/false, got '" + value +
                              "'");
}

inline std::array<double, 3> parse_triple(const std::string& key, const std::string& value) {
  auto items = split_list(value);
  check(items.size() == 3, "config key " + key + ": expected three comma-separated numbers");
  return {parse_double(key, items[0]), parse_double(key, items[1]),
          parse_double(key, items[2])};
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  auto items = split_list(value);
  check(!items.empty(), "config key " + key + ": expected a comma-separated integer list");
  std::vector<int> out;
  for (const auto& it : items) out.push_back(static_cast<int>(parse_int(key, it)));
  return out;
}

}  // namespace detail

inline void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "desk") {
    cfg = RunConfig{};
    return;
  }
  if (name == "paper-cifar") {
    cfg = RunConfig{};
    cfg.preset = name;
    cfg.dataset = "cifar";
    cfg.label_bytes = 2;
    cfg.num_classes = 100;
    cfg.val_fraction = 0.1;
    cfg.norm_mean = {0.5071, 0.4865, 0.4409};
    cfg.norm_std = {0.2673, 0.2564, 0.2762};
    cfg.widths = {16, 32, 64};
    cfg.blocks_per_stage = 3;
    cfg.epochs = 200;
    cfg.batch_size = 128;
    cfg.lr = 0.001;
    cfg.drop_every = 50;
    cfg.augment = true;
    return;
  }
  throw std::invalid_argument("unknown preset: " + name + " (known: desk, paper-cifar)");
}

inline AttentionMode parse_attention(const std::string& name) {
  if (name == "none") return AttentionMode::None;
  if (name == "channel") return AttentionMode::ChannelOnly;
  if (name == "spatial") return AttentionMode::SpatialOnly;
  if (name == "channel_spatial") return AttentionMode::ChannelThenSpatial;
  if (name == "spatial_channel") return AttentionMode::SpatialThenChannel;
  if (name == "cat") return AttentionMode::FullCat;
  throw std::invalid_argument(
      "config key attention: expected one of none, channel, spatial, channel_spatial, "
      "spatial_channel, cat; got '" +
      name + "'");
}

inline void apply_kv(RunConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = detail::trim(raw_key);
  const std::string value = detail::trim(raw_value);
  auto as_int = [&] { return static_cast<int>(detail::parse_int(key, value)); };
  auto as_u64 = [&] {
    long long v = detail::parse_int(key, value);
    check(v >= 0, "config key " + key + ": expected a non-negative integer");
    return static_cast<std::uint64_t>(v);
  };

  if (key == "preset") {
    apply_preset(cfg, value);
  } else if (key == "dataset") {
    check(value == "synthetic" || value == "cifar",
          "config key dataset: expected synthetic or cifar, got '" + value + "'");
    cfg.dataset = value;
  } else if (key == "data_path") {
    cfg.data_path = value;
  } else if (key == "label_bytes") {
    cfg.label_bytes = as_int();
  } else if (key == "n_synth") {
    cfg.n_synth = as_int();
  } else if (key == "synth_seed") {
    cfg.synth_seed = as_u64();
  } else if (key == "val_fraction") {
    cfg.val_fraction = detail::parse_double(key, value);
  } else if (key == "norm_mean") {
    cfg.norm_mean = detail::parse_triple(key, value);
  } else if (key == "norm_std") {
    cfg.norm_std = detail::parse_triple(key, value);
  } else if (key == "widths") {
    cfg.widths = detail::parse_int_list(key, value);
  } else if (key == "blocks_per_stage") {
    cfg.blocks_per_stage = as_int();
  } else if (key == "num_classes") {
    cfg.num_classes = as_int();
  } else if (key == "attention") {
    cfg.attention = value;
    parse_attention(value);  // fail fast on unknown names
  } else if (key == "interior_factors") {
    cfg.interior_factors = detail::parse_bool(key, value);
  } else if (key == "reduction") {
    cfg.reduction = as_int();
  } else if (key == "gaussian_k") {
    cfg.gaussian_k = as_int();
  } else if (key == "sigma") {
    cfg.sigma = detail::parse_double(key, value);
  } else if (key == "fusion") {
    check(value == "canonical" || value == "pseudocode",
          "config key fusion: expected canonical or pseudocode, got '" + value + "'");
    cfg.fusion = value;
  } else if (key == "signed_normalize") {
    cfg.signed_normalize = detail::parse_bool(key, value);
  } else if (key == "gep") {
    cfg.gep = detail::parse_bool(key, value);
  } else if (key == "epochs") {
    cfg.epochs = as_int();
  } else if (key == "batch_size") {
    cfg.batch_size = as_int();
  } else if (key == "lr") {
    cfg.lr = detail::parse_double(key, value);
  } else if (key == "drop_every") {
    cfg.drop_every = as_int();
  } else if (key == "momentum") {
    cfg.momentum = detail::parse_double(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = detail::parse_double(key, value);
  } else if (key == "augment") {
    cfg.augment = detail::parse_bool(key, value);
  } else if (key == "max_steps") {
    cfg.max_steps = as_int();
  } else if (key == "seed") {
    cfg.seed = as_u64();
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "ckpt") {
    cfg.ckpt = value;
  } else if (key == "arms") {
    cfg.arms = value;
  } else if (key == "layers") {
    cfg.layers = value;
  } else if (key == "export_count") {
    cfg.export_count = as_int();
  } else {
    throw std::invalid_argument("unknown config key: " + key);
  }
}

inline void apply_override(RunConfig& cfg, const std::string& kv) {
  size_t eq = kv.find('=');
  check(eq != std::string::npos, "override '" + kv + "' is not of the form key=value");
  apply_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
}

/// Lines are key=value; blank lines and #-comments (whole-line or trailing)
/// are ignored. A preset key resets every field, so it belongs first.
inline RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open config file " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    check(eq != std::string::npos, path + ":" + std::to_string(lineno) +
                                       ": expected key=value, got '" + line + "'");
    apply_kv(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

inline ModelSpec config_model_spec(const RunConfig& cfg) {
  ModelSpec spec;
  spec.stage_widths = cfg.widths;
  spec.blocks_per_stage = cfg.blocks_per_stage;
  spec.num_classes = cfg.num_classes;
  spec.attention = parse_attention(cfg.attention);
  spec.interior_factors = cfg.interior_factors;
  spec.cat.reduction = cfg.reduction;
  spec.cat.gaussian_k = cfg.gaussian_k;
  spec.cat.sigma = cfg.sigma;
  spec.cat.fusion =
      cfg.fusion == "pseudocode" ? FusionVariant::Pseudocode : FusionVariant::Canonical;
  spec.cat.signed_normalize = cfg.signed_normalize;
  spec.cat.gep_enabled = cfg.gep;
  validate_spec(spec);
  return spec;
}

inline TrainOptions config_train_options(const RunConfig& cfg) {
  TrainOptions opt;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.base_lr = cfg.lr;
  opt.drop_every = cfg.drop_every;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  opt.augment = cfg.augment;
  opt.max_steps = cfg.max_steps;
  opt.seed = cfg.seed;
  return opt;
}

inline NormConstants config_norm(const RunConfig& cfg) {
  NormConstants norm;
  norm.mean = cfg.norm_mean;
  norm.stdev = cfg.norm_std;
  return norm;
}

inline std::vector<std::string> config_arms(const RunConfig& cfg) {
  if (cfg.arms == "default") return default_ablation_arms();
  auto arms = detail::split_list(cfg.arms);
  check(!arms.empty(), "config key arms: expected a comma-separated arm list or 'default'");
  return arms;
}

inline std::string config_ckpt_path(const RunConfig& cfg) {
  return cfg.ckpt.empty() ? cfg.out_dir + "/model.ckpt" : cfg.ckpt;
}

}  // namespace cat
