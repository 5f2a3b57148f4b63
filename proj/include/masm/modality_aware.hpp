#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "masm/rng.hpp"
#include "masm/tensor.hpp"

namespace masm {

/// Token-level keep/drop predictor shared by the four modality streams of
/// one layer. local maps each d-wide token to d/2 features; those are
/// average-pooled over all tokens into a global summary, and the decision
/// head scores the [local, global] concatenation into two logits per token
/// (column 0 = keep, column 1 = drop).
struct MaskPredictorParams {
  Tensor local_weight;   // [d, d/2]
  Tensor local_bias;     // [d/2]
  Tensor decide_weight;  // [d, 2]
  Tensor decide_bias;    // [2]
};

/// Single-head self-attention over the two tokens of a modality pair,
/// followed by a shared two-layer FFN. No residual, no normalization.
struct PairAttentionParams {
  Tensor wq;  // [d, d]
  Tensor wk;  // [d, d]
  Tensor wv;  // [d, d]
  Tensor w0;  // [d, 4d]
  Tensor b0;  // [4d]
  Tensor w1;  // [4d, d]
  Tensor b1;  // [d]
};

/// How the keep gate is realized. kSample: hard straight-through
/// Gumbel-Softmax draw (training). kArgmax: deterministic argmax of pi, no
/// randomness (inference). kSoftSample: the relaxed Gumbel-Softmax sample
/// without hardening; fully smooth, so finite differences can probe the same
/// backward path the straight-through estimator uses.
enum class GateMode { kSample, kArgmax, kSoftSample };

struct MaskResult {
  Tensor pi;                       // [N, 2] keep/drop probabilities
  Tensor keep;                     // [N, 1] gate; hard 0/1 except kSoftSample
  std::vector<std::uint8_t> bits;  // gate thresholded at 1/2
};

/// Scores feat [N, d] into per-token keep gates. Sampling modes consume 2N
/// Gumbel draws from rng; kArgmax touches no randomness (rng may be null).
MaskResult predict_mask(const Tensor& feat, const MaskPredictorParams& params,
                        double tau, Rng* rng, GateMode mode);

/// Zeroes the rows of feat whose gate is 0; kept rows pass through
/// unchanged. keep is [N, 1] against feat [N, d].
Tensor prune(const Tensor& feat, const Tensor& keep);

/// Attends each position's two pair tokens to each other. Both inputs are
/// [N, d]; scores are scaled by 1/sqrt(d).
std::array<Tensor, 2> pair_attention(const Tensor& feat_a,
                                     const Tensor& feat_b,
                                     const PairAttentionParams& params);

/// Fills each pruned position from its partner when the partner kept the
/// position, and falls back to the stream's own token when both dropped it:
/// out_a = keep_a*h_a + (1-keep_a)*(keep_b*h_b + (1-keep_b)*h_a).
Tensor substitute_masked(const Tensor& h_own, const Tensor& h_partner,
                         const Tensor& keep_own, const Tensor& keep_partner);

/// One fusion layer over the four modality token matrices (index 0..3 =
/// clinical modalities 1..4). Pair (1,4) is processed before (2,3), so the
/// RNG consumption order when sampling is masks for streams 1, 4, 2, 3. The
/// result concatenates the fused streams in modality order into [N, 4d].
Tensor modality_aware_forward(const std::array<Tensor, 4>& feats,
                              const MaskPredictorParams& predictor,
                              const PairAttentionParams& pair14,
                              const PairAttentionParams& pair23, double tau,
                              Rng* rng, GateMode mode);

}  // namespace masm
