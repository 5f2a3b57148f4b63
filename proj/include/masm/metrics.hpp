#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "masm/tensor.hpp"

namespace masm {

/// Soft Dice loss over a [K, ...] prediction/target pair. Channel order for
/// segmentation volumes is (ET, WT, TC).
struct LossReport {
  Tensor loss;                    // scalar, differentiable w.r.t. the input
  double total = 0.0;             // loss value, = 1 - mean(per_class)
  std::vector<double> per_class;  // Dice term per leading-axis class, in [0,1]
};

/// total = 1 - (1/K) sum_k (2 sum p*g + eps) / (sum p^2 + sum g^2 + eps),
/// summed per class over all remaining axes. g must be binary.
LossReport soft_dice_loss(const Tensor& pred, const Tensor& target,
                          double eps = 1e-5);

/// Hard-mask overlap 2|A&B| / (|A|+|B|); 1.0 when both masks are empty.
/// Masks are flat 0/1 rasters of equal length.
double dice_score(const std::vector<std::uint8_t>& a,
                  const std::vector<std::uint8_t>& b);

using Voxel = std::array<int, 3>;

struct Hd95 {
  double value = 0.0;
  bool sentinel = false;  // one side empty: value is the volume diagonal
};

/// Symmetric 95th-percentile Hausdorff distance between two voxel sets,
/// Euclidean metric, nearest-rank percentile (the ceil(0.95 n)-th order
/// statistic per direction, then the max of the two directions). Both sets
/// empty -> 0; exactly one empty -> the diagonal of `extents` as a flagged
/// sentinel.
Hd95 hd95(const std::vector<Voxel>& a, const std::vector<Voxel>& b,
          const std::array<std::size_t, 3>& extents);

/// Voxel coordinates (z, y, x) of the set bits of a row-major [D,H,W] mask.
std::vector<Voxel> mask_to_voxels(const std::vector<std::uint8_t>& mask,
                                  const std::array<std::size_t, 3>& extents);

}  // namespace masm
