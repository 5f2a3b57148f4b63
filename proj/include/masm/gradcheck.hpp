#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masm/backbone.hpp"

namespace masm {

/// Worst relative error over all scalars of one parameter group (a group is
/// the dotted name minus its last segment, e.g. "enc.l1.conv1").
struct GroupCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

struct GradcheckReport {
  Toggles toggles;
  std::vector<GroupCheck> groups;  // registry order
  double worst = 0.0;

  std::vector<std::string> failing(double tol) const;
};

/// Compares the tape's gradients of the soft Dice loss against central
/// finite differences at every parameter scalar. The token gates run in the
/// relaxed sampling mode with the noise replayed identically on every probe,
/// so the whole map is differentiable. corrupt_group, when non-empty, adds a
/// constant to that group's analytic gradients as a negative control.
GradcheckReport run_gradcheck(const BackboneConfig& cfg, Toggles toggles,
                              std::uint64_t seed, double h,
                              const std::string& corrupt_group = "");

/// The gradcheck probe configuration: 8 cubed input, two layers.
BackboneConfig gradcheck_config();

}  // namespace masm
