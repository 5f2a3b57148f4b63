#include "masm/volume.hpp"

#include <cmath>

#include "masm/errors.hpp"

namespace masm {

namespace {

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radius;

  bool contains(double z, double y, double x) const {
    const double a = (z - center[0]) / radius[0];
    const double b = (y - center[1]) / radius[1];
    const double c = (x - center[2]) / radius[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

void check_spec(const PhantomSpec& s) {
  if (s.size < 4) throw ConfigError("phantom: volume size must be >= 4");
  if (s.tumors_min < 1 || s.tumors_min > s.tumors_max)
    throw ConfigError("phantom: tumor count range must satisfy 1 <= min <= max");
  auto check_range = [](const char* name, const std::array<double, 2>& r) {
    if (!(r[0] > 0.0) || !(r[0] <= r[1]))
      throw ConfigError(std::string("phantom: bad ") + name +
                        " radius range");
  };
  check_range("WT", s.wt_radius);
  check_range("TC", s.tc_radius);
  check_range("ET", s.et_radius);
  if (!(s.wt_radius[0] > s.tc_radius[1]) ||
      !(s.tc_radius[0] > s.et_radius[1]))
    throw ConfigError(
        "phantom: shell radius ranges must be strictly decreasing "
        "(WT > TC > ET)");
  const double margin = s.wt_radius[1];
  if (static_cast<double>(s.size - 1) - margin < margin)
    throw ConfigError("phantom: volume size " + std::to_string(s.size) +
                      " too small for WT radius up to " +
                      std::to_string(s.wt_radius[1]));
}

}  // namespace

PhantomSpec default_phantom_spec(std::size_t size, std::uint64_t seed) {
  PhantomSpec s;
  s.seed = seed;
  s.size = size;
  const double k = static_cast<double>(size) / 32.0;
  for (auto* r : {&s.wt_radius, &s.tc_radius, &s.et_radius}) {
    (*r)[0] *= k;
    (*r)[1] *= k;
  }
  return s;
}

MultiModalVolume gen_phantom(const PhantomSpec& spec) {
  check_spec(spec);
  const std::size_t v = spec.size;
  Rng rng(spec.seed);

  const std::size_t count =
      spec.tumors_min +
      rng.next_below(spec.tumors_max - spec.tumors_min + 1);
  std::vector<Ellipsoid> wt(count), tc(count), et(count);
  const double lo = spec.wt_radius[1];
  const double hi = static_cast<double>(v - 1) - spec.wt_radius[1];
  for (std::size_t t = 0; t < count; ++t) {
    std::array<double, 3> center;
    for (double& c : center) c = rng.next_uniform(lo, hi);
    auto draw_radius = [&](const std::array<double, 2>& r) {
      std::array<double, 3> out;
      for (double& x : out) x = rng.next_uniform(r[0], r[1]);
      return out;
    };
    wt[t] = {center, draw_radius(spec.wt_radius)};
    tc[t] = {center, draw_radius(spec.tc_radius)};
    et[t] = {center, draw_radius(spec.et_radius)};
  }

  const std::size_t n = v * v * v;
  std::vector<std::uint8_t> in_wt(n, 0), in_tc(n, 0), in_et(n, 0);
  std::size_t i = 0;
  for (std::size_t z = 0; z < v; ++z)
    for (std::size_t y = 0; y < v; ++y)
      for (std::size_t x = 0; x < v; ++x, ++i) {
        const double dz = static_cast<double>(z);
        const double dy = static_cast<double>(y);
        const double dx = static_cast<double>(x);
        for (std::size_t t = 0; t < count; ++t) {
          if (wt[t].contains(dz, dy, dx)) in_wt[i] = 1;
          if (tc[t].contains(dz, dy, dx)) in_tc[i] = 1;
          if (et[t].contains(dz, dy, dx)) in_et[i] = 1;
        }
      }

  MultiModalVolume out;
  out.case_id = "phantom-" + std::to_string(spec.seed);
  out.extents = {v, v, v};
  out.voxels.resize(4);
  // Uniform noise with standard deviation sigma; the amplitude keeps every
  // value an exact +-*/ combination so renders are bit-stable.
  const double amp = spec.noise_sigma * std::sqrt(3.0);
  for (std::size_t m = 0; m < 4; ++m) {
    std::vector<double>& raster = out.voxels[m];
    raster.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      double val = spec.base[m];
      if (in_wt[j]) val += spec.wt_contrast[m];
      if (in_tc[j]) val += spec.tc_contrast[m];
      if (in_et[j]) val += spec.et_contrast[m];
      raster[j] = val + amp * (2.0 * rng.next_unit() - 1.0);
    }
  }

  bool any_contrast = false;
  for (std::size_t m = 0; m < 4; ++m)
    if (spec.wt_contrast[m] != 0.0 || spec.tc_contrast[m] != 0.0 ||
        spec.et_contrast[m] != 0.0)
      any_contrast = true;
  if (any_contrast) {
    out.has_label = true;
    out.label[0] = std::move(in_et);
    out.label[1] = std::move(in_wt);
    out.label[2] = std::move(in_tc);
  }
  return out;
}

MultiModalVolume normalize(const MultiModalVolume& vol) {
  MultiModalVolume out = vol;
  for (std::size_t m = 0; m < out.voxels.size(); ++m) {
    std::vector<double>& raster = out.voxels[m];
    double sum = 0.0;
    std::size_t count = 0;
    for (double x : raster)
      if (x != 0.0) {
        sum += x;
        ++count;
      }
    if (count == 0)
      throw NumericError("normalize: modality " + std::to_string(m + 1) +
                         " is all zero");
    const double mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (double x : raster)
      if (x != 0.0) var += (x - mean) * (x - mean);
    var /= static_cast<double>(count);
    if (var == 0.0)
      throw NumericError("normalize: modality " + std::to_string(m + 1) +
                         " has no intensity spread among nonzero voxels");
    const double inv = 1.0 / std::sqrt(var);
    for (double& x : raster)
      if (x != 0.0) x = (x - mean) * inv;
  }
  return out;
}

namespace {

template <typename T>
std::vector<T> mirrored(const std::vector<T>& in,
                        const std::array<std::size_t, 3>& ext,
                        const std::array<bool, 3>& flip) {
  const std::size_t d = ext[0], h = ext[1], w = ext[2];
  std::vector<T> out(in.size());
  for (std::size_t z = 0; z < d; ++z) {
    const std::size_t sz = flip[0] ? d - 1 - z : z;
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = flip[1] ? h - 1 - y : y;
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = flip[2] ? w - 1 - x : x;
        out[(z * h + y) * w + x] = in[(sz * h + sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

MultiModalVolume augment(const MultiModalVolume& vol, Rng& rng) {
  MultiModalVolume out = vol;
  std::array<bool, 3> flip;
  for (bool& f : flip) f = rng.next_bernoulli(0.5);
  for (auto& raster : out.voxels)
    raster = mirrored(raster, out.extents, flip);
  if (out.has_label)
    for (auto& channel : out.label)
      channel = mirrored(channel, out.extents, flip);
  for (auto& raster : out.voxels) {
    const double scl = rng.next_uniform(0.9, 1.1);
    const double shift = rng.next_uniform(-0.1, 0.1);
    for (double& x : raster) x = x * scl + shift;
  }
  return out;
}

}  // namespace masm
