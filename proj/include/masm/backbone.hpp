#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "masm/tensor.hpp"

namespace masm {

/// Structural description of the segmentation network. The encoder is shared
/// by all four modalities; each modality stream carries channels[j]/4
/// channels at layer j (1-based), at spatial extent volume/2^j per axis.
/// Desk default below; the paper-scale setting is depth 6 with channels
/// {96,128,192,256,384,512}.
struct BackboneConfig {
  std::size_t volume = 32;  // voxels per axis, cubic input
  std::size_t depth = 4;    // encoder layers E
  std::vector<std::size_t> channels = {16, 32, 64, 128};  // C_j, length E
  std::size_t heads = 4;    // attention heads in the bottleneck fusion
};

/// Which fusion modules are active. `aware` fuses clinically paired
/// modalities on layers 1..E-1; `shift` runs the mosaic-shift attention at
/// the bottleneck layer E. Both off = plain channel concatenation (the
/// ablation baseline).
struct Toggles {
  bool aware = false;
  bool shift = false;
};

/// Throws ConfigError when the config violates the shape algebra: volume not
/// divisible by 2^depth, channels not divisible by 4 (or 8 for layers that
/// run the pair fusion, whose mask predictor halves the width), channel list
/// decreasing, or head count not dividing the bottleneck width.
void validate_config(const BackboneConfig& cfg, const Toggles& toggles);

struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Complete ordered list of trainable parameters for the configuration.
/// The order is frozen: it defines initialization draw order and checkpoint
/// record order.
std::vector<ParamSpec> parameter_specs(const BackboneConfig& cfg,
                                       const Toggles& toggles);

/// Total trainable scalar count.
std::size_t parameter_count(const BackboneConfig& cfg, const Toggles& toggles);

/// Per-modality channel width at 1-based layer j.
inline std::size_t stream_width(const BackboneConfig& cfg, std::size_t j) {
  return cfg.channels.at(j - 1) / 4;
}

/// Spatial extent per axis at 1-based layer j.
inline std::size_t layer_extent(const BackboneConfig& cfg, std::size_t j) {
  return cfg.volume >> j;
}

/// [c, D, H, W] feature map viewed as a [D*H*W, c] token matrix.
Tensor to_tokens(const Tensor& x);

/// Inverse of to_tokens for the given spatial extents.
Tensor from_tokens(const Tensor& tokens,
                   const std::array<std::size_t, 3>& extents);

}  // namespace masm
