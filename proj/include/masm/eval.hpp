#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "masm/model.hpp"
#include "masm/volume.hpp"

namespace masm {

/// Per-case segmentation quality, channel order (ET, WT, TC).
struct CaseEval {
  std::string case_id;
  std::array<double, 3> dice = {0, 0, 0};
  std::array<double, 3> hd95 = {0, 0, 0};
  std::array<bool, 3> hd95_sentinel = {false, false, false};
};

struct EvalSummary {
  std::vector<CaseEval> cases;  // ordered by case id
  std::array<double, 3> mean_dice = {0, 0, 0};
  std::array<double, 3> mean_hd95 = {0, 0, 0};
  std::size_t sentinel_count = 0;
};

/// Thresholds the sigmoid output at 0.5 into three binary masks.
std::array<std::vector<std::uint8_t>, 3> predict_masks(
    const MasmModel& model, const MultiModalVolume& vol);

/// Scores every labeled case with the deterministic inference path. Cases
/// are processed by a pool of `threads` workers (0 = hardware concurrency);
/// the report order and all numbers are independent of scheduling. Volumes
/// must already be normalized.
EvalSummary evaluate_cases(const MasmModel& model,
                           const std::vector<MultiModalVolume>& cases,
                           std::size_t threads);

/// Tab-separated per-case table with a trailing mean row. The sentinel
/// columns hold 0/1 flags per case and flag counts in the mean row.
std::string render_eval_table(const EvalSummary& summary);

/// Line-oriented key=value summary.
std::string render_eval_report(const EvalSummary& summary);

}  // namespace masm
