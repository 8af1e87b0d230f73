#pragma once

#include <cat/config.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace cat {

struct CliOptions {
  std::string config_path;             // empty: built-in desk defaults
  std::vector<std::string> overrides;  // key=value, applied after the file
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool verify = false;  // 64-bit single-thread mode
};

RunConfig resolve_config(const CliOptions& opts);

// Each command returns a process exit code and reports failures as a single
// `error: ...` line on stderr.
int cmd_train(const CliOptions& opts);
int cmd_eval(const CliOptions& opts);
int cmd_export_attn(const CliOptions& opts);
int cmd_ablate(const CliOptions& opts);

}  // namespace cat
