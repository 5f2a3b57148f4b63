#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "masm/backbone.hpp"

namespace masm {

/// Everything a run needs. Defaults are the desk-scale setup; a config file
/// overrides defaults, command-line flags override the file.
struct RunConfig {
  BackboneConfig net;  // volume 32, depth 4, channels {16,32,64,128}, heads 4
  Toggles toggles = {true, true};
  double tau = 1.0;
  double lr = 1e-4;
  std::size_t warmup = 20;
  std::size_t steps = 300;
  std::size_t batch = 2;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::size_t eval_threads = 0;      // 0: one worker per hardware thread
  std::string data_dir;
  std::string out_dir;
};

/// Parses "key = value" lines; '#' starts a comment, blank lines are
/// skipped. Returns pairs in file order. Malformed lines raise ConfigError
/// with the line number.
std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text);

/// Applies one key. Unknown keys and unparseable values raise ConfigError.
/// Keys: volume, depth, channels (comma-separated), heads, tau, lr, warmup,
/// steps, batch, seed, checkpoint_every, eval_threads, aware, shift, data,
/// out.
void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value);

/// File variant of the two above.
void load_config_file(RunConfig& cfg, const std::string& path);

/// Structural validation (delegates to validate_config) plus run-level
/// checks: positive steps and batch, warmup not past the step budget.
void validate_run_config(const RunConfig& cfg);

/// The resolved config as "key = value" lines in a fixed order, suitable for
/// the info command and for run manifests.
std::string render_config(const RunConfig& cfg);

}  // namespace masm
