#include "masm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "masm/ops.hpp"

namespace masm {

LossReport soft_dice_loss(const Tensor& pred, const Tensor& target,
                          double eps) {
  if (pred.shape() != target.shape())
    throw ShapeError("soft_dice_loss: prediction " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  if (pred.rank() < 1)
    throw ShapeError("soft_dice_loss: needs a leading class axis");
  for (double v : target.values())
    if (v != 0.0 && v != 1.0)
      throw NumericError("soft_dice_loss: target is not binary");

  const std::size_t classes = pred.shape()[0];
  const std::size_t per = pred.size() / classes;
  Tensor p = reshape(pred, {classes, per});
  Tensor g = reshape(target, {classes, per});
  Tensor epsilon = Tensor::scalar(eps);

  LossReport rep;
  Tensor dice_sum;
  for (std::size_t k = 0; k < classes; ++k) {
    Tensor pk = slice(p, 0, k, 1);
    Tensor gk = slice(g, 0, k, 1);
    Tensor num = add(scale(sum_all(mul(pk, gk)), 2.0), epsilon);
    Tensor den = add(add(sum_all(mul(pk, pk)), sum_all(mul(gk, gk))), epsilon);
    Tensor dice = divide(num, den);
    rep.per_class.push_back(dice.value_at(0));
    dice_sum = k == 0 ? dice : add(dice_sum, dice);
  }
  rep.loss = sub(Tensor::scalar(1.0),
                 scale(dice_sum, 1.0 / static_cast<double>(classes)));
  rep.total = rep.loss.value_at(0);
  return rep;
}

double dice_score(const std::vector<std::uint8_t>& a,
                  const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size())
    throw ShapeError("dice_score: mask lengths differ, " +
                     std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  std::size_t ca = 0, cb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca += a[i] != 0;
    cb += b[i] != 0;
    both += (a[i] != 0) && (b[i] != 0);
  }
  if (ca + cb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(ca + cb);
}

namespace {

double sq_dist(const Voxel& a, const Voxel& b) {
  const double dz = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dx = a[2] - b[2];
  return dz * dz + dy * dy + dx * dx;
}

// Nearest-rank 95th percentile of the per-source nearest-neighbor distances.
double directed_p95(const std::vector<Voxel>& from,
                    const std::vector<Voxel>& to) {
  std::vector<double> dists;
  dists.reserve(from.size());
  for (const Voxel& f : from) {
    double best = sq_dist(f, to[0]);
    for (std::size_t i = 1; i < to.size(); ++i)
      best = std::min(best, sq_dist(f, to[i]));
    dists.push_back(std::sqrt(best));
  }
  std::sort(dists.begin(), dists.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(dists.size())));
  return dists[rank - 1];
}

}  // namespace

Hd95 hd95(const std::vector<Voxel>& a, const std::vector<Voxel>& b,
          const std::array<std::size_t, 3>& extents) {
  Hd95 out;
  if (a.empty() && b.empty()) return out;
  if (a.empty() || b.empty()) {
    const double d = static_cast<double>(extents[0]);
    const double h = static_cast<double>(extents[1]);
    const double w = static_cast<double>(extents[2]);
    out.value = std::sqrt(d * d + h * h + w * w);
    out.sentinel = true;
    return out;
  }
  out.value = std::max(directed_p95(a, b), directed_p95(b, a));
  return out;
}

std::vector<Voxel> mask_to_voxels(const std::vector<std::uint8_t>& mask,
                                  const std::array<std::size_t, 3>& extents) {
  const std::size_t d = extents[0], h = extents[1], w = extents[2];
  if (mask.size() != d * h * w)
    throw ShapeError("mask_to_voxels: mask length " +
                     std::to_string(mask.size()) + " vs extents " +
                     std::to_string(d) + "x" + std::to_string(h) + "x" +
                     std::to_string(w));
  std::vector<Voxel> out;
  for (std::size_t z = 0; z < d; ++z)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (mask[(z * h + y) * w + x])
          out.push_back({static_cast<int>(z), static_cast<int>(y),
                         static_cast<int>(x)});
  return out;
}

}  // namespace masm
