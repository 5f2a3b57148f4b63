#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "masm/tensor.hpp"

namespace masm {

/// Position-wise modality permutation. source[i][k] names the 0-based stream
/// whose token lands in output stream i at position k; every column is a
/// permutation of {0,1,2,3}. In clinical numbering (stream index + 1) the
/// paired modalities are 1<->4 and 2<->3, and a stream never receives its
/// partner's token.
struct ShiftPattern {
  std::size_t positions = 0;
  std::array<std::vector<std::uint8_t>, 4> source;
};

/// Mosaic pattern cycling through three column permutations: identity at
/// position k % 3 == 0, swap (1<->2)(3<->4) at k % 3 == 1, and swap
/// (1<->3)(2<->4) at k % 3 == 2 (clinical numbering).
ShiftPattern build_pattern(std::size_t positions);

/// Rearranges the four [N, d] token matrices column-permutation-wise:
/// out[i] row k = feats[source[i][k]] row k.
std::array<Tensor, 4> shift(const std::array<Tensor, 4>& feats,
                            const ShiftPattern& pattern);

/// Exact left inverse of shift for the same pattern.
std::array<Tensor, 4> unshift(const std::array<Tensor, 4>& feats,
                              const ShiftPattern& pattern);

/// Residual pre-norm multi-head attention: x + MHA(norm(x) * gamma + beta).
/// Projections carry no bias; per-head scores are scaled by
/// 1/sqrt(d/heads).
struct MhaParams {
  Tensor ln_gamma;  // [d]
  Tensor ln_beta;   // [d]
  Tensor wq;        // [d, d]
  Tensor wk;        // [d, d]
  Tensor wv;        // [d, d]
  Tensor wo;        // [d, d]
  std::size_t heads = 4;
};

/// x is [S, d] or [batch, S, d]; attention runs over the S axis.
Tensor mha_block(const Tensor& x, const MhaParams& params);

/// Bottleneck fusion: shift the streams by the mosaic pattern, run spatial
/// self-attention within each (shared weights, streams batched), restore the
/// original arrangement, attend across the four modalities at every
/// position, and concatenate the streams in modality order into [N, 4d].
Tensor modality_shift_forward(const std::array<Tensor, 4>& feats,
                              const MhaParams& spatial, const MhaParams& modal,
                              const ShiftPattern& pattern);

}  // namespace masm
