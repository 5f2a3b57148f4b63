#include "masm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "masm/errors.hpp"
#include "masm/metrics.hpp"
#include "masm/model.hpp"
#include "masm/rng.hpp"
#include "masm/tensor.hpp"

namespace masm {
namespace {

std::string group_of(const std::string& name) {
  auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

std::vector<std::string> GradcheckReport::failing(double tol) const {
  std::vector<std::string> bad;
  for (const auto& g : groups) {
    if (!(g.max_rel_err < tol)) bad.push_back(g.name);
  }
  return bad;
}

BackboneConfig gradcheck_config() {
  BackboneConfig cfg;
  cfg.volume = 8;
  cfg.depth = 2;
  cfg.channels = {8, 16};
  cfg.heads = 2;
  return cfg;
}

GradcheckReport run_gradcheck(const BackboneConfig& cfg, Toggles toggles,
                              std::uint64_t seed, double h,
                              const std::string& corrupt_group) {
  MasmModel model(cfg, toggles);
  model.init(seed);
  // Freshly initialized biases and norm offsets are exactly zero, which puts
  // many relu pre-activations exactly on their kink (an all-zero token row
  // reaches the hidden layers unchanged). Finite differences are only
  // meaningful where the loss is differentiable, so every parameter is
  // nudged to a generic point first.
  Rng jitter = Rng(seed).derived(6);
  for (const Tensor& p : model.parameters()) {
    Tensor t = p;
    for (double& v : t.mutable_values()) {
      v += jitter.next_uniform(-0.05, 0.05);
    }
  }

  const std::size_t vox = cfg.volume * cfg.volume * cfg.volume;
  Rng data_rng = Rng(seed).derived(5);
  std::vector<std::vector<double>> mods(4);
  for (auto& m : mods) {
    m.resize(vox);
    for (auto& v : m) v = data_rng.next_uniform(-1.0, 1.0);
  }
  std::vector<double> target_values(3 * vox);
  for (auto& v : target_values) {
    v = data_rng.next_bernoulli(0.5) ? 1.0 : 0.0;
  }
  Tensor target =
      Tensor::from({3, cfg.volume, cfg.volume, cfg.volume}, target_values);

  // The gate noise is replayed from the same stream on every call, so the
  // loss is a fixed differentiable function of the parameters and central
  // differences are meaningful even with sampling enabled.
  auto loss_value = [&]() {
    Rng gate = Rng(seed).derived(2);
    Tensor pred = model.forward(mods, &gate, GateMode::kSoftSample);
    return soft_dice_loss(pred, target).total;
  };

  // One tape pass for the analytic side.
  model.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Rng gate = Rng(seed).derived(2);
    Tensor pred = model.forward(mods, &gate, GateMode::kSoftSample);
    LossReport report = soft_dice_loss(pred, target);
    tape.backward(report.loss);
  }

  GradcheckReport report;
  report.toggles = toggles;
  std::map<std::string, std::size_t> group_index;
  bool corrupted = false;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    Tensor tensor = model.parameters()[p];
    const std::string group = group_of(model.names()[p]);
    auto it = group_index.find(group);
    if (it == group_index.end()) {
      it = group_index.emplace(group, report.groups.size()).first;
      report.groups.push_back({group, 0.0, 0});
    }
    GroupCheck& check = report.groups[it->second];
    const bool corrupt = group == corrupt_group;
    corrupted = corrupted || corrupt;

    std::vector<double> analytic(tensor.size(), 0.0);
    if (tensor.has_grad()) analytic = tensor.grad();
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor.value_at(i);
      tensor.mutable_values()[i] = orig + h;
      const double up = loss_value();
      tensor.mutable_values()[i] = orig - h;
      const double down = loss_value();
      tensor.mutable_values()[i] = orig;

      const double fd = (up - down) / (2.0 * h);
      const double got = analytic[i] + (corrupt ? 1.0 : 0.0);
      const double rel =
          std::abs(fd - got) / std::max(1e-6, std::abs(fd) + std::abs(got));
      check.max_rel_err = std::max(check.max_rel_err, rel);
      ++check.checked;
      report.worst = std::max(report.worst, rel);
    }
  }
  if (!corrupt_group.empty() && !corrupted) {
    throw ConfigError("gradcheck has no parameter group named '" +
                      corrupt_group + "'");
  }
  return report;
}

}  // namespace masm
