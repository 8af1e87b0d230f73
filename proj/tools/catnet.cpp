#include <CLI11.hpp>

#include <cat/commands.hpp>

int main(int argc, char** argv) {
  CLI::App app{"catnet: train, evaluate, and inspect a small attention-augmented resnet"};
  app.require_subcommand(1);
  app.fallthrough();

  cat::CliOptions opts;
  app.add_option("--config", opts.config_path, "key=value config file (default: desk preset)");
  app.add_option("--override", opts.overrides,
                 "config override key=value, repeatable, applied after the file");
  auto* seed = app.add_option("--seed", opts.seed, "overrides the config seed");
  app.add_flag("--verify", opts.verify, "single-thread 64-bit verification mode");

  auto* train = app.add_subcommand("train", "train a model; writes model.ckpt, factors.csv, "
                                            "metrics.csv into out_dir");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  auto* export_attn = app.add_subcommand(
      "export-attn", "write per-block spatial descriptor and fused-gate PGM heatmaps");
  auto* ablate =
      app.add_subcommand("ablate", "train every configured attention arm; writes ablation.csv");

  CLI11_PARSE(app, argc, argv);
  opts.seed_set = seed->count() > 0;

  if (train->parsed()) return cat::cmd_train(opts);
  if (eval->parsed()) return cat::cmd_eval(opts);
  if (export_attn->parsed()) return cat::cmd_export_attn(opts);
  if (ablate->parsed()) return cat::cmd_ablate(opts);
  return 1;
}
