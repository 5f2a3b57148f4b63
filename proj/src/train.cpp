#include "masm/train.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "masm/errors.hpp"
#include "masm/io.hpp"
#include "masm/log.hpp"
#include "masm/metrics.hpp"
#include "masm/ops.hpp"

namespace masm {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

// Exclusive-create lock file, removed when the run ends (also on error
// paths). A leftover lock from a killed process must be deleted by hand.
class RunLock {
 public:
  explicit RunLock(const std::string& dir)
      : path_(dir + "/.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw ConfigError("run directory is locked by " + path_ +
                        " (another training run, or a stale lock to delete)");
    }
    ::close(fd);
  }
  ~RunLock() { ::unlink(path_.c_str()); }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

// The first parameter holding a non-finite value, if any.
std::string first_nan_param(const MasmModel& model) {
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    for (double v : model.parameters()[i].values()) {
      if (!std::isfinite(v)) return model.names()[i];
    }
  }
  return "";
}

Tensor label_tensor(const MultiModalVolume& vol) {
  const std::size_t n = vol.voxel_count();
  std::vector<double> values(3 * n);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      values[k * n + i] = vol.label[k][i] ? 1.0 : 0.0;
    }
  }
  return Tensor::from(
      {3, vol.extents[0], vol.extents[1], vol.extents[2]}, std::move(values));
}

}  // namespace

double lr_at_step(double lr, std::size_t warmup, std::size_t total,
                  std::size_t step) {
  if (warmup > 0 && step <= warmup) {
    return lr * double(step) / double(warmup);
  }
  if (step >= total) return 0.0;
  const double progress =
      double(step - warmup) / double(total - warmup);
  return lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

AdamOptimizer::AdamOptimizer(const std::vector<Tensor>& params)
    : params_(params) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::step(double lr) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++t_;
  const double bias1 = 1.0 - std::pow(kBeta1, double(t_));
  const double bias2 = 1.0 - std::pow(kBeta2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const std::vector<double>& g = p.grad();
    std::vector<double>& values = p.mutable_values();
    for (std::size_t e = 0; e < values.size(); ++e) {
      m_[i][e] = kBeta1 * m_[i][e] + (1.0 - kBeta1) * g[e];
      v_[i][e] = kBeta2 * v_[i][e] + (1.0 - kBeta2) * g[e] * g[e];
      const double mhat = m_[i][e] / bias1;
      const double vhat = v_[i][e] / bias2;
      values[e] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

std::vector<MultiModalVolume> load_cases(const std::string& dir,
                                         bool require_label) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw IoError("data directory " + dir + " does not exist");
  }
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".mmv") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) {
    throw ConfigError("no .mmv cases under " + dir);
  }
  std::vector<MultiModalVolume> cases;
  cases.reserve(paths.size());
  for (const std::string& p : paths) {
    cases.push_back(read_volume(p));
    if (cases.back().voxels.size() != 4) {
      throw ShapeError("case " + cases.back().case_id + " has " +
                       std::to_string(cases.back().voxels.size()) +
                       " modalities, expected 4");
    }
    if (require_label && !cases.back().has_label) {
      throw ConfigError("case " + cases.back().case_id + " has no label");
    }
  }
  return cases;
}

TrainResult run_training(const RunConfig& cfg) {
  validate_run_config(cfg);
  if (cfg.data_dir.empty() || cfg.out_dir.empty()) {
    throw ConfigError("training needs both data and out paths");
  }
  std::filesystem::create_directories(cfg.out_dir);
  RunLock lock(cfg.out_dir);

  std::vector<MultiModalVolume> cases = load_cases(cfg.data_dir, true);
  for (MultiModalVolume& c : cases) c = normalize(c);
  for (const MultiModalVolume& c : cases) {
    const std::array<std::size_t, 3> want = {cfg.net.volume, cfg.net.volume,
                                             cfg.net.volume};
    if (c.extents != want) {
      throw ShapeError("case " + c.case_id + " extents do not match volume " +
                       std::to_string(cfg.net.volume));
    }
  }
  log_info("loaded " + std::to_string(cases.size()) + " cases from " +
           cfg.data_dir);

  MasmModel model(cfg.net, cfg.toggles);
  model.init(cfg.seed);
  AdamOptimizer optimizer(model.parameters());
  Rng master(cfg.seed);
  Rng aug_rng = master.derived(1);
  Rng gate_rng = master.derived(2);

  TrainResult result;
  result.steps.reserve(cfg.steps);
  const auto t_start = std::chrono::steady_clock::now();

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const double lr = lr_at_step(cfg.lr, cfg.warmup, cfg.steps, step);
    model.zero_grad();

    Tape tape;
    double loss_value = 0.0;
    std::array<double, 3> dice = {0, 0, 0};
    try {
      TapeScope scope(tape);
      Tensor loss_sum;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const std::size_t pick =
            ((step - 1) * cfg.batch + b) % cases.size();
        MultiModalVolume sample = augment(cases[pick], aug_rng);
        Tensor pred = model.forward(sample.voxels, &gate_rng,
                                    GateMode::kSample, cfg.tau);
        LossReport report = soft_dice_loss(pred, label_tensor(sample));
        loss_sum = b == 0 ? report.loss : add(loss_sum, report.loss);
        for (std::size_t k = 0; k < 3; ++k) {
          dice[k] += report.per_class[k] / double(cfg.batch);
        }
      }
      Tensor loss = scale(loss_sum, 1.0 / double(cfg.batch));
      loss_value = loss.value_at(0);
      if (!std::isfinite(loss_value)) {
        throw NumericError("loss is not finite");
      }
      tape.backward(loss);
    } catch (const NumericError& e) {
      const std::string culprit = first_nan_param(model);
      throw NumericError(
          std::string(e.what()) + " at step " + std::to_string(step) +
          (culprit.empty()
               ? " (parameters are finite; activations overflowed)"
               : " (first non-finite parameter: " + culprit + ")"));
    }
    optimizer.step(lr);
    const std::string culprit = first_nan_param(model);
    if (!culprit.empty()) {
      throw NumericError("parameter " + culprit +
                         " became non-finite after the update at step " +
                         std::to_string(step));
    }

    result.steps.push_back(StepRecord{step, loss_value, dice, lr});
    if (step % 25 == 0 || step == cfg.steps) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        t_start)
              .count();
      log_info("step " + std::to_string(step) + " loss " + fmt9(loss_value) +
               " (" + fmt9(secs) + "s)");
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
        step != cfg.steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_%06zu.ckpt", step);
      save_checkpoint(cfg.out_dir + "/" + name, model.state());
    }
  }

  result.checkpoint_path = cfg.out_dir + "/model.ckpt";
  save_checkpoint(result.checkpoint_path, model.state());
  result.final_eval = evaluate_cases(model, cases, cfg.eval_threads);

  std::ostringstream log;
  for (const StepRecord& r : result.steps) {
    log << "step=" << r.step << " loss=" << fmt9(r.loss)
        << " dice_et=" << fmt9(r.dice[0]) << " dice_wt=" << fmt9(r.dice[1])
        << " dice_tc=" << fmt9(r.dice[2]) << " lr=" << fmt9(r.lr) << "\n";
  }
  log << "final_loss=" << fmt9(result.steps.back().loss) << "\n";
  log << render_eval_report(result.final_eval);
  log << "checkpoint=model.ckpt\n";
  write_text(cfg.out_dir + "/train.log", log.str());

  std::ostringstream tsv;
  tsv << "step\tloss\tdice_et\tdice_wt\tdice_tc\tlr\n";
  for (const StepRecord& r : result.steps) {
    tsv << r.step << "\t" << fmt9(r.loss) << "\t" << fmt9(r.dice[0]) << "\t"
        << fmt9(r.dice[1]) << "\t" << fmt9(r.dice[2]) << "\t" << fmt9(r.lr)
        << "\n";
  }
  write_text(cfg.out_dir + "/train.tsv", tsv.str());
  write_text(cfg.out_dir + "/eval.tsv", render_eval_table(result.final_eval));
  write_text(cfg.out_dir + "/eval.txt",
             render_eval_report(result.final_eval));
  write_text(cfg.out_dir + "/config.txt", render_config(cfg));
  return result;
}

}  // namespace masm
