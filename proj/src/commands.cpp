#include <cat/commands.hpp>

#include <cat/checkpoint.hpp>
#include <cat/pgm.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace cat {

namespace {

template <typename T>
std::pair<DatasetHandle<T>, DatasetHandle<T>> make_datasets(const RunConfig& cfg) {
  const NormConstants norm = config_norm(cfg);
  DatasetHandle<T> full;
  if (cfg.dataset == "synthetic") {
    check(cfg.num_classes == 2, "the synthetic dataset has 2 classes; set num_classes=2");
    full = gen_synthetic<T>(cfg.n_synth, cfg.synth_seed, norm);
  } else {
    check(!cfg.data_path.empty(), "dataset=cifar requires data_path");
    full = load_cifar_bin<T>(cfg.data_path, cfg.num_classes, norm, cfg.label_bytes);
    check(full.size() > 0, "dataset " + cfg.data_path + " is empty");
  }
  return split_dataset(full, cfg.val_fraction, cfg.seed);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  check(!ec, "cannot create output directory " + cfg.out_dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  check(f.good(), "cannot write " + path);
  return f;
}

void write_factors_csv(const std::string& path, const std::vector<FactorRow>& rows) {
  auto f = open_out(path);
  f << "epoch,block,C_w,S_w,w_c,w_s,C_alpha,C_beta,C_gamma,S_alpha,S_beta,S_gamma\n";
  for (const auto& r : rows)
    f << r.epoch << ',' << r.block << ',' << format_double(r.c_w) << ','
      << format_double(r.s_w) << ',' << format_double(r.w_c) << ',' << format_double(r.w_s)
      << ',' << format_double(r.c_alpha) << ',' << format_double(r.c_beta) << ','
      << format_double(r.c_gamma) << ',' << format_double(r.s_alpha) << ','
      << format_double(r.s_beta) << ',' << format_double(r.s_gamma) << '\n';
  check(f.good(), "write failed for " + path);
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
  auto f = open_out(path);
  f << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  for (const auto& r : rows)
    f << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_acc)
      << ',' << format_double(r.val_loss) << ',' << format_double(r.val_acc) << ','
      << format_double(r.lr) << '\n';
  check(f.good(), "write failed for " + path);
}

void print_metrics_line(const EvalResult& ev) {
  std::printf("accuracy=%.6f loss=%.6f n=%lld\n", ev.accuracy, ev.loss,
              static_cast<long long>(ev.n));
}

template <typename T>
int run_train(const RunConfig& cfg) {
  ModelSpec spec = config_model_spec(cfg);
  auto [train, val] = make_datasets<T>(cfg);
  Model<T> model = build_model<T>(spec, cfg.seed);
  TrainResult res = train_model(model, train, val, config_train_options(cfg));

  ensure_out_dir(cfg);
  save_checkpoint(config_ckpt_path(cfg), model.store);
  write_factors_csv(cfg.out_dir + "/factors.csv", res.factors);
  write_metrics_csv(cfg.out_dir + "/metrics.csv", res.metrics);

  print_metrics_line(eval_model(model, val, cfg.batch_size));
  return 0;
}

template <typename T>
int run_eval(const RunConfig& cfg) {
  ModelSpec spec = config_model_spec(cfg);
  Model<T> model = build_model<T>(spec, cfg.seed);
  load_checkpoint_into(config_ckpt_path(cfg), model.store);
  auto [train, val] = make_datasets<T>(cfg);
  print_metrics_line(eval_model(model, val, cfg.batch_size));
  return 0;
}

template <typename T>
int run_export_attn(const RunConfig& cfg) {
  ModelSpec spec = config_model_spec(cfg);
  Model<T> model = build_model<T>(spec, cfg.seed);
  load_checkpoint_into(config_ckpt_path(cfg), model.store);

  const std::vector<std::string> available = model.cat_block_names();
  std::vector<std::string> selected =
      cfg.layers == "all" ? available : detail::split_list(cfg.layers);
  check(!selected.empty(), "no attention blocks to export (attention=" + cfg.attention + ")");
  {
    std::set<std::string> known(available.begin(), available.end());
    for (const auto& name : selected) {
      if (known.count(name)) continue;
      std::string list;
      for (const auto& a : available) list += (list.empty() ? "" : ", ") + a;
      throw std::invalid_argument("unknown attention block " + name + " (available: " + list +
                                  ")");
    }
  }

  auto [train, val] = make_datasets<T>(cfg);
  const DatasetHandle<T>& source = val.size() > 0 ? val : train;
  const std::int64_t count = std::min<std::int64_t>(cfg.export_count, source.size());
  check(count > 0, "no images to export");
  ensure_out_dir(cfg);

  for (std::int64_t img = 0; img < count; ++img) {
    Tensor<T> one({1, 3, detail::kImageSize, detail::kImageSize});
    std::copy_n(source.images.data() + img * one.numel(), one.numel(), one.data());
    FeatureTaps<T> taps;
    Tape<T> tape;
    model_forward(tape, model, one, false, &taps);

    for (auto& [block, features] : taps) {
      bool wanted = false;
      for (const auto& name : selected) wanted = wanted || name == block;
      if (!wanted) continue;
      ResidualBlock<T>* blk = nullptr;
      for (auto& b : model.blocks)
        if (b.name == block) blk = &b;
      check(blk != nullptr && blk->cat.has_value(), "internal: tap without block " + block);

      AttentionOutput<T> out = cat_forward(features, *blk->cat);
      const int h = features.extent(2), w = features.extent(3);
      Tensor<T> neg_avg = negate(out.s_avg);
      const std::string prefix = cfg.out_dir + "/img" + std::to_string(img) + "_" + block + "_";
      write_pgm(prefix + "-savg.pgm", neg_avg.data(), h, w);
      write_pgm(prefix + "smax.pgm", out.s_max.data(), h, w);
      write_pgm(prefix + "sent.pgm", out.s_ent.data(), h, w);
      write_pgm(prefix + "fused.pgm", out.spatial_map.data(), h, w);
    }
  }
  std::printf("exported %lld image(s) x %zu block(s) to %s\n", static_cast<long long>(count),
              selected.size(), cfg.out_dir.c_str());
  return 0;
}

template <typename T>
int run_ablate(const RunConfig& cfg) {
  ModelSpec spec = config_model_spec(cfg);
  auto [train, val] = make_datasets<T>(cfg);
  std::vector<AblationRow> rows =
      run_ablation<T>(config_arms(cfg), spec, train, val, config_train_options(cfg));

  ensure_out_dir(cfg);
  const std::string path = cfg.out_dir + "/ablation.csv";
  auto f = open_out(path);
  std::string body = "mode,gep,params,accuracy,seconds\n";
  for (const auto& r : rows) {
    char line[160];
    if (r.failed)
      std::snprintf(line, sizeof line, "%s,%d,%lld,nan,%.3f\n", r.mode.c_str(), r.gep ? 1 : 0,
                    static_cast<long long>(r.params), r.seconds);
    else
      std::snprintf(line, sizeof line, "%s,%d,%lld,%.6f,%.3f\n", r.mode.c_str(), r.gep ? 1 : 0,
                    static_cast<long long>(r.params), r.accuracy, r.seconds);
    body += line;
  }
  f << body;
  check(f.good(), "write failed for " + path);
  std::fputs(body.c_str(), stdout);
  return 0;
}

template <int (*FloatFn)(const RunConfig&), int (*DoubleFn)(const RunConfig&)>
int dispatch(const CliOptions& opts) {
  try {
    const RunConfig cfg = resolve_config(opts);
    return opts.verify ? DoubleFn(cfg) : FloatFn(cfg);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return 1;
  }
}

}  // namespace

RunConfig resolve_config(const CliOptions& opts) {
  RunConfig cfg =
      opts.config_path.empty() ? RunConfig{} : load_config_file(opts.config_path);
  for (const auto& kv : opts.overrides) apply_override(cfg, kv);
  if (opts.seed_set) cfg.seed = opts.seed;
  return cfg;
}

int cmd_train(const CliOptions& opts) {
  return dispatch<run_train<float>, run_train<double>>(opts);
}

int cmd_eval(const CliOptions& opts) {
  return dispatch<run_eval<float>, run_eval<double>>(opts);
}

int cmd_export_attn(const CliOptions& opts) {
  return dispatch<run_export_attn<float>, run_export_attn<double>>(opts);
}

int cmd_ablate(const CliOptions& opts) {
  return dispatch<run_ablate<float>, run_ablate<double>>(opts);
}

}  // namespace cat
