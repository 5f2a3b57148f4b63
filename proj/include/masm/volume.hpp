#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "masm/rng.hpp"

namespace masm {

/// Co-registered multi-channel scan. Modalities follow the clinical indexing
/// 1=T2, 2=T1, 3=T1-CE, 4=FLAIR (stored 0-based). Voxels are held as doubles
/// in memory; files store 32-bit floats. Label channels are (ET, WT, TC) and
/// nest as ET within TC within WT.
struct MultiModalVolume {
  std::string case_id;
  std::array<std::size_t, 3> extents = {0, 0, 0};  // D, H, W
  std::vector<std::vector<double>> voxels;         // one raster per modality
  bool has_label = false;
  std::array<std::vector<std::uint8_t>, 3> label;  // ET, WT, TC masks

  std::size_t voxel_count() const {
    return extents[0] * extents[1] * extents[2];
  }
};

/// Recipe for a synthetic phantom: constant per-modality background tissue
/// with nested ellipsoidal tumor shells added on top, plus seeded uniform
/// noise. Radius ranges must be disjoint and decreasing (WT > TC > ET) so
/// every sampled tumor nests.
struct PhantomSpec {
  std::uint64_t seed = 0;
  std::size_t size = 32;  // cubic volume, D = H = W = size
  std::size_t tumors_min = 1;
  std::size_t tumors_max = 2;
  std::array<double, 2> wt_radius = {6.0, 9.0};  // semi-axis range, voxels
  std::array<double, 2> tc_radius = {3.5, 5.5};
  std::array<double, 2> et_radius = {1.5, 2.9};
  std::array<double, 4> base = {1.0, 0.9, 1.1, 0.95};  // tissue per modality
  // Additive contrast per shell and modality. WT is bright in the
  // water-sensitive channels (T2, FLAIR), ET in the contrast-enhanced T1.
  std::array<double, 4> wt_contrast = {1.2, 0.25, 0.25, 1.4};
  std::array<double, 4> tc_contrast = {0.5, 0.6, 0.5, 0.45};
  std::array<double, 4> et_contrast = {0.3, 0.4, 1.5, 0.3};
  double noise_sigma = 0.05;
};

/// Spec with radius ranges scaled to the volume size (the defaults above
/// assume size 32).
PhantomSpec default_phantom_spec(std::size_t size, std::uint64_t seed);

/// Deterministic render of spec: same seed, same bits. Labels are emitted
/// only when some contrast coefficient is nonzero (an invisible tumor has no
/// ground truth).
MultiModalVolume gen_phantom(const PhantomSpec& spec);

/// Per modality: mean 0 / std 1 over the nonzero voxels, zeros untouched.
/// Statistics are computed and applied in double precision.
MultiModalVolume normalize(const MultiModalVolume& vol);

/// Training-time augmentation: per-axis mirror with probability 1/2 (applied
/// to every modality and label channel alike), then per-modality intensity
/// v*scale + shift with scale ~ U[0.9, 1.1] and shift ~ U[-0.1, 0.1]. Labels
/// are only ever mirrored. Draw order: 3 mirror flags, then (scale, shift)
/// per modality.
MultiModalVolume augment(const MultiModalVolume& vol, Rng& rng);

}  // namespace masm
