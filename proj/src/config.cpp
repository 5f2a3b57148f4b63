#include "masm/config.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "masm/errors.hpp"
#include "masm/io.hpp"

namespace masm {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " needs a non-negative integer, "
                      "got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " needs a number, got '" + value +
                      "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config key " + key + " needs 0/1/true/false, got '" +
                    value + "'");
}

std::vector<std::size_t> parse_channels(const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_u64("channels", trim(item)));
  }
  if (out.empty()) {
    throw ConfigError("config key channels needs a comma-separated list");
  }
  return out;
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not 'key = value': '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        " has an empty key or value");
    }
    entries.emplace_back(key, value);
  }
  return entries;
}

void apply_config_entry(RunConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "volume") {
    cfg.net.volume = parse_u64(key, value);
  } else if (key == "depth") {
    cfg.net.depth = parse_u64(key, value);
  } else if (key == "channels") {
    cfg.net.channels = parse_channels(value);
  } else if (key == "heads") {
    cfg.net.heads = parse_u64(key, value);
  } else if (key == "tau") {
    cfg.tau = parse_real(key, value);
  } else if (key == "lr") {
    cfg.lr = parse_real(key, value);
  } else if (key == "warmup") {
    cfg.warmup = parse_u64(key, value);
  } else if (key == "steps") {
    cfg.steps = parse_u64(key, value);
  } else if (key == "batch") {
    cfg.batch = parse_u64(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "checkpoint_every") {
    cfg.checkpoint_every = parse_u64(key, value);
  } else if (key == "eval_threads") {
    cfg.eval_threads = parse_u64(key, value);
  } else if (key == "aware") {
    cfg.toggles.aware = parse_bool(key, value);
  } else if (key == "shift") {
    cfg.toggles.shift = parse_bool(key, value);
  } else if (key == "data") {
    cfg.data_dir = value;
  } else if (key == "out") {
    cfg.out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  const auto bytes = read_file_bytes(path);
  const std::string text(bytes.begin(), bytes.end());
  for (const auto& [key, value] : parse_config_text(text)) {
    apply_config_entry(cfg, key, value);
  }
}

void validate_run_config(const RunConfig& cfg) {
  validate_config(cfg.net, cfg.toggles);
  if (cfg.tau <= 0.0) {
    throw ConfigError("tau must be positive");
  }
  if (cfg.lr <= 0.0) {
    throw ConfigError("lr must be positive");
  }
  if (cfg.steps == 0) {
    throw ConfigError("steps must be positive");
  }
  if (cfg.batch == 0) {
    throw ConfigError("batch must be positive");
  }
  if (cfg.warmup > cfg.steps) {
    throw ConfigError("warmup (" + std::to_string(cfg.warmup) +
                      ") exceeds the step budget (" +
                      std::to_string(cfg.steps) + ")");
  }
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "volume = " << cfg.net.volume << "\n";
  out << "depth = " << cfg.net.depth << "\n";
  out << "channels = ";
  for (std::size_t i = 0; i < cfg.net.channels.size(); ++i) {
    if (i) out << ",";
    out << cfg.net.channels[i];
  }
  out << "\n";
  out << "heads = " << cfg.net.heads << "\n";
  out << "aware = " << (cfg.toggles.aware ? 1 : 0) << "\n";
  out << "shift = " << (cfg.toggles.shift ? 1 : 0) << "\n";
  out << "tau = " << fmt_real(cfg.tau) << "\n";
  out << "lr = " << fmt_real(cfg.lr) << "\n";
  out << "warmup = " << cfg.warmup << "\n";
  out << "steps = " << cfg.steps << "\n";
  out << "batch = " << cfg.batch << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  out << "eval_threads = " << cfg.eval_threads << "\n";
  out << "data = " << cfg.data_dir << "\n";
  out << "out = " << cfg.out_dir << "\n";
  return out.str();
}

}  // namespace masm
