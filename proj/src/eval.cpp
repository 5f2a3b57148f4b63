#include "masm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "masm/errors.hpp"
#include "masm/metrics.hpp"
#include "masm/ops.hpp"

namespace masm {

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

CaseEval eval_one(const MasmModel& model, const MultiModalVolume& vol) {
  if (!vol.has_label) {
    throw ConfigError("case " + vol.case_id + " has no label to score");
  }
  CaseEval out;
  out.case_id = vol.case_id;
  const auto masks = predict_masks(model, vol);
  for (std::size_t k = 0; k < 3; ++k) {
    out.dice[k] = dice_score(masks[k], vol.label[k]);
    const Hd95 h = hd95(mask_to_voxels(masks[k], vol.extents),
                        mask_to_voxels(vol.label[k], vol.extents),
                        vol.extents);
    out.hd95[k] = h.value;
    out.hd95_sentinel[k] = h.sentinel;
  }
  return out;
}

}  // namespace

std::array<std::vector<std::uint8_t>, 3> predict_masks(
    const MasmModel& model, const MultiModalVolume& vol) {
  const std::size_t v = model.config().volume;
  if (vol.extents != std::array<std::size_t, 3>{v, v, v}) {
    throw ShapeError("case " + vol.case_id + " has extents " +
                     std::to_string(vol.extents[0]) + "x" +
                     std::to_string(vol.extents[1]) + "x" +
                     std::to_string(vol.extents[2]) +
                     ", model expects " + std::to_string(v) + " cubed");
  }
  Tensor pred = model.forward(vol.voxels, nullptr, GateMode::kArgmax);
  const std::size_t n = vol.voxel_count();
  std::array<std::vector<std::uint8_t>, 3> masks;
  for (std::size_t k = 0; k < 3; ++k) {
    masks[k].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      masks[k][i] = pred.value_at(k * n + i) >= 0.5 ? 1 : 0;
    }
  }
  return masks;
}

EvalSummary evaluate_cases(const MasmModel& model,
                           const std::vector<MultiModalVolume>& cases,
                           std::size_t threads) {
  EvalSummary summary;
  if (cases.empty()) {
    throw ConfigError("no cases to evaluate");
  }
  std::vector<std::size_t> order(cases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cases[a].case_id < cases[b].case_id;
  });

  if (threads == 0) {
    threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = std::min(threads, cases.size());

  std::vector<CaseEval> results(cases.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= order.size()) return;
      try {
        results[i] = eval_one(model, cases[order[i]]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  summary.cases = std::move(results);
  for (const CaseEval& c : summary.cases) {
    for (std::size_t k = 0; k < 3; ++k) {
      summary.mean_dice[k] += c.dice[k];
      summary.mean_hd95[k] += c.hd95[k];
      if (c.hd95_sentinel[k]) ++summary.sentinel_count;
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    summary.mean_dice[k] /= double(summary.cases.size());
    summary.mean_hd95[k] /= double(summary.cases.size());
  }
  return summary;
}

std::string render_eval_table(const EvalSummary& summary) {
  std::ostringstream out;
  out << "case_id\tdice_et\tdice_wt\tdice_tc\thd95_et\thd95_wt\thd95_tc"
      << "\tsent_et\tsent_wt\tsent_tc\n";
  std::array<std::size_t, 3> sentinels = {0, 0, 0};
  for (const CaseEval& c : summary.cases) {
    out << c.case_id;
    for (double d : c.dice) out << "\t" << fmt6(d);
    for (double h : c.hd95) out << "\t" << fmt6(h);
    for (std::size_t k = 0; k < 3; ++k) {
      out << "\t" << (c.hd95_sentinel[k] ? 1 : 0);
      if (c.hd95_sentinel[k]) ++sentinels[k];
    }
    out << "\n";
  }
  out << "mean";
  for (double d : summary.mean_dice) out << "\t" << fmt6(d);
  for (double h : summary.mean_hd95) out << "\t" << fmt6(h);
  for (std::size_t k = 0; k < 3; ++k) out << "\t" << sentinels[k];
  out << "\n";
  return out.str();
}

std::string render_eval_report(const EvalSummary& summary) {
  std::ostringstream out;
  out << "cases=" << summary.cases.size() << "\n";
  const char* tags[3] = {"et", "wt", "tc"};
  for (std::size_t k = 0; k < 3; ++k) {
    out << "dice_" << tags[k] << "_mean=" << fmt6(summary.mean_dice[k])
        << "\n";
  }
  for (std::size_t k = 0; k < 3; ++k) {
    out << "hd95_" << tags[k] << "_mean=" << fmt6(summary.mean_hd95[k])
        << "\n";
  }
  out << "hd95_sentinels=" << summary.sentinel_count << "\n";
  return out.str();
}

}  // namespace masm
