// Command-line front end: data generation, training, evaluation, prediction,
// gradient checking, and config inspection over the masm library.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "masm/config.hpp"
#include "masm/errors.hpp"
#include "masm/eval.hpp"
#include "masm/gradcheck.hpp"
#include "masm/io.hpp"
#include "masm/log.hpp"
#include "masm/model.hpp"
#include "masm/train.hpp"
#include "masm/volume.hpp"

namespace {

using namespace masm;

// Every run-config key doubles as a CLI flag. The file is applied first,
// then any flag that was actually given, so flags win.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> values;
  std::vector<CLI::Option*> options;
  std::vector<std::string> keys = {
      "volume",           "depth", "channels", "heads", "tau",
      "lr",               "warmup", "steps",   "batch", "seed",
      "checkpoint_every", "eval_threads",      "aware", "shift",
      "data",             "out"};

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "config file of key = value lines");
    values.resize(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
      options.push_back(
          sub->add_option("--" + keys[i], values[i], "overrides the file"));
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (options[i]->count() > 0) apply_config_entry(cfg, keys[i], values[i]);
    }
    return cfg;
  }
};

void apply_env_log_level() {
  const char* level = std::getenv("MASM_LOG_LEVEL");
  if (level == nullptr) return;
  const auto parsed = parse_log_level(level);
  if (!parsed) {
    throw ConfigError(std::string("MASM_LOG_LEVEL must be one of "
                                  "error|warn|info|debug, got '") +
                      level + "'");
  }
  set_log_level(*parsed);
}

void cmd_gen_data(const std::string& out_dir, std::size_t count,
                  std::size_t size, std::uint64_t seed) {
  if (count == 0) throw ConfigError("gen-data needs a positive --count");
  std::filesystem::create_directories(out_dir);
  const Rng root(seed);
  std::string manifest = "case_id\tseed\n";
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t case_seed = root.derived(i).seed();
    char name[32];
    std::snprintf(name, sizeof(name), "case_%04zu", i);
    write_volume(out_dir + "/" + name + ".mmv",
                 gen_phantom(default_phantom_spec(size, case_seed)));
    manifest += std::string(name) + "\t" + std::to_string(case_seed) + "\n";
    log_debug(std::string("wrote ") + name + ".mmv");
  }
  write_file_bytes(
      out_dir + "/manifest.tsv",
      std::vector<unsigned char>(manifest.begin(), manifest.end()));
  log_info("generated " + std::to_string(count) + " cases under " + out_dir);
}

void cmd_train(const ConfigFlags& flags) {
  const RunConfig cfg = flags.resolve();
  const TrainResult result = run_training(cfg);
  std::cout << render_eval_report(result.final_eval);
}

MasmModel restored_model(const RunConfig& cfg, const std::string& ckpt) {
  MasmModel model(cfg.net, cfg.toggles);
  model.load_state(load_checkpoint(ckpt));
  return model;
}

void cmd_eval(const ConfigFlags& flags, const std::string& ckpt) {
  const RunConfig cfg = flags.resolve();
  validate_run_config(cfg);
  if (cfg.data_dir.empty()) throw ConfigError("eval needs a data directory");
  const MasmModel model = restored_model(cfg, ckpt);
  std::vector<MultiModalVolume> cases = load_cases(cfg.data_dir, true);
  for (MultiModalVolume& c : cases) c = normalize(c);
  const EvalSummary summary = evaluate_cases(model, cases, cfg.eval_threads);
  const std::string table = render_eval_table(summary);
  const std::string report = render_eval_report(summary);
  std::cout << table << report;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    write_file_bytes(cfg.out_dir + "/eval.tsv",
                     std::vector<unsigned char>(table.begin(), table.end()));
    write_file_bytes(cfg.out_dir + "/eval.txt",
                     std::vector<unsigned char>(report.begin(), report.end()));
  }
}

// Grayscale mid-slice with the nested regions at distinct levels.
void write_pgm_slice(const std::string& path,
                     const std::array<std::vector<std::uint8_t>, 3>& masks,
                     const std::array<std::size_t, 3>& extents,
                     std::size_t axis) {
  const std::size_t d = extents[0], h = extents[1], w = extents[2];
  const std::size_t rows = axis == 0 ? h : d;
  const std::size_t cols = axis == 2 ? h : w;
  std::string out = "P5\n" + std::to_string(cols) + " " +
                    std::to_string(rows) + "\n255\n";
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t z = axis == 0 ? d / 2 : r;
      std::size_t y = axis == 1 ? h / 2 : (axis == 0 ? r : c);
      std::size_t x = axis == 2 ? w / 2 : c;
      const std::size_t i = (z * h + y) * w + x;
      unsigned char v = 0;
      if (masks[1][i]) v = 85;   // whole tumor
      if (masks[2][i]) v = 170;  // tumor core
      if (masks[0][i]) v = 255;  // enhancing tumor
      out += char(v);
    }
  }
  write_file_bytes(path, std::vector<unsigned char>(out.begin(), out.end()));
}

void cmd_predict(const ConfigFlags& flags, const std::string& ckpt,
                 const std::string& input, bool pgm) {
  const RunConfig cfg = flags.resolve();
  validate_run_config(cfg);
  if (cfg.out_dir.empty()) throw ConfigError("predict needs an out directory");
  const MasmModel model = restored_model(cfg, ckpt);
  const MultiModalVolume vol = normalize(read_volume(input));
  const auto masks = predict_masks(model, vol);

  MultiModalVolume out;
  out.case_id = vol.case_id + "_pred";
  out.extents = vol.extents;
  out.has_label = true;
  out.label = masks;
  std::filesystem::create_directories(cfg.out_dir);
  const std::string base = cfg.out_dir + "/" + vol.case_id;
  write_volume(base + "_pred.mmv", out);
  log_info("wrote " + base + "_pred.mmv");
  if (pgm) {
    const char* axis_tag[3] = {"z", "y", "x"};
    for (std::size_t axis = 0; axis < 3; ++axis) {
      write_pgm_slice(base + "_" + axis_tag[axis] + ".pgm", masks, vol.extents,
                      axis);
    }
    log_info("wrote mid-slice previews for " + vol.case_id);
  }
}

void cmd_gradcheck(std::uint64_t seed, double h, double tol,
                   const std::string& corrupt) {
  const BackboneConfig cfg = gradcheck_config();
  const Toggles combos[4] = {{false, false}, {true, false},
                             {false, true},  {true, true}};
  std::vector<std::string> failures;
  for (const Toggles& toggles : combos) {
    const std::string tag = std::string("aware=") +
                            (toggles.aware ? "1" : "0") + " shift=" +
                            (toggles.shift ? "1" : "0");
    std::cout << "# " << tag << "\n";
    const GradcheckReport report = run_gradcheck(cfg, toggles, seed, h,
                                                 corrupt);
    for (const GroupCheck& g : report.groups) {
      char line[128];
      std::snprintf(line, sizeof(line), "%-28s %12.5e  (%zu scalars)\n",
                    g.name.c_str(), g.max_rel_err, g.checked);
      std::cout << line;
    }
    for (const std::string& group : report.failing(tol)) {
      failures.push_back(group + " [" + tag + "]");
    }
  }
  if (!failures.empty()) {
    std::string all;
    for (const std::string& f : failures) {
      if (!all.empty()) all += ", ";
      all += f;
    }
    throw NumericError("gradient check failed for " + all);
  }
  std::cout << "all parameter groups within " << tol << "\n";
}

void cmd_info(const ConfigFlags& flags) {
  const RunConfig cfg = flags.resolve();
  validate_run_config(cfg);
  std::cout << render_config(cfg);
  std::cout << "parameters = " << parameter_count(cfg.net, cfg.toggles)
            << "\n";
  std::cout << "parameters_baseline = "
            << parameter_count(cfg.net, {false, false}) << "\n";
  std::cout << "parameters_aware_only = "
            << parameter_count(cfg.net, {true, false}) << "\n";
  std::cout << "parameters_shift_only = "
            << parameter_count(cfg.net, {false, true}) << "\n";
  std::cout << "parameters_full = " << parameter_count(cfg.net, {true, true})
            << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-modal volumetric segmentation toolkit"};
  app.require_subcommand(1);

  CLI::App* gen = app.add_subcommand("gen-data", "write synthetic cases");
  std::string gen_out;
  std::size_t gen_count = 2, gen_size = 32;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of cases");
  gen->add_option("--size", gen_size, "cube edge in voxels");
  gen->add_option("--seed", gen_seed, "root seed");
  gen->callback([&] { cmd_gen_data(gen_out, gen_count, gen_size, gen_seed); });

  CLI::App* train = app.add_subcommand("train", "train a model");
  ConfigFlags train_flags;
  train_flags.attach(train);
  train->callback([&] { cmd_train(train_flags); });

  CLI::App* eval = app.add_subcommand("eval", "score labeled cases");
  ConfigFlags eval_flags;
  std::string eval_ckpt;
  eval_flags.attach(eval);
  eval->add_option("--ckpt", eval_ckpt, "checkpoint to load")->required();
  eval->callback([&] { cmd_eval(eval_flags, eval_ckpt); });

  CLI::App* predict = app.add_subcommand("predict", "segment one case");
  ConfigFlags predict_flags;
  std::string predict_ckpt, predict_in;
  bool predict_pgm = false;
  predict_flags.attach(predict);
  predict->add_option("--ckpt", predict_ckpt, "checkpoint to load")
      ->required();
  predict->add_option("--in", predict_in, "input .mmv case")->required();
  predict->add_flag("--pgm", predict_pgm, "also write mid-slice previews");
  predict->callback(
      [&] { cmd_predict(predict_flags, predict_ckpt, predict_in, predict_pgm); });

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "compare tape gradients against finite differences");
  std::uint64_t gc_seed = 7;
  double gc_h = 1e-5, gc_tol = 1e-3;
  std::string gc_corrupt;
  gradcheck->add_option("--seed", gc_seed, "probe seed");
  gradcheck->add_option("--fd-step", gc_h, "finite-difference step");
  gradcheck->add_option("--tol", gc_tol, "relative-error threshold");
  gradcheck
      ->add_option("--corrupt", gc_corrupt,
                   "negative control: skew this group's gradients")
      ->group("");
  gradcheck->callback(
      [&] { cmd_gradcheck(gc_seed, gc_h, gc_tol, gc_corrupt); });

  CLI::App* info = app.add_subcommand("info", "print the resolved config");
  ConfigFlags info_flags;
  info_flags.attach(info);
  info->callback([&] { cmd_info(info_flags); });

  try {
    apply_env_log_level();
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const masm::NumericError& e) {
    masm::log_error(e.what());
    return 2;
  } catch (const masm::ConfigError& e) {
    masm::log_error(e.what());
    return 1;
  } catch (const masm::IoError& e) {
    masm::log_error(e.what());
    return 3;
  } catch (const std::exception& e) {
    masm::log_error(e.what());
    return 1;
  }
  return 0;
}
