#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "masm/config.hpp"
#include "masm/eval.hpp"
#include "masm/model.hpp"
#include "masm/volume.hpp"

namespace masm {

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::array<double, 3> dice = {0, 0, 0};  // soft Dice terms (ET, WT, TC)
  double lr = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  EvalSummary final_eval;  // inference scoring of the training cases
  std::string checkpoint_path;
};

/// Learning rate at 1-based step: linear 0 -> lr over `warmup` steps, then
/// cosine decay that reaches exactly 0 at `total`.
double lr_at_step(double lr, std::size_t warmup, std::size_t total,
                  std::size_t step);

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8) over a fixed
/// parameter list. Parameters without a gradient are left untouched.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const std::vector<Tensor>& params);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

/// Loads every *.mmv under dir, sorted by case id. require_label demands a
/// label on every case.
std::vector<MultiModalVolume> load_cases(const std::string& dir,
                                         bool require_label);

/// Full training run: loads and normalizes data, trains for cfg.steps with
/// per-step augmentation, saves checkpoints, scores the training cases, and
/// writes train.log, train.tsv, eval.tsv, eval.txt, config.txt and
/// model.ckpt under cfg.out_dir. A lock file guards the run directory.
TrainResult run_training(const RunConfig& cfg);

}  // namespace masm
