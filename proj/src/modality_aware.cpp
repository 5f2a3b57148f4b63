#include "masm/modality_aware.hpp"

#include <cmath>
#include <string>

#include "masm/errors.hpp"
#include "masm/ops.hpp"

namespace masm {

namespace {

void check_token_matrix(const Tensor& t, const char* what) {
  if (!t.defined() || t.shape().size() != 2) {
    throw ShapeError(std::string(what) + " must be a [N, d] token matrix");
  }
}

}  // namespace

MaskResult predict_mask(const Tensor& feat, const MaskPredictorParams& params,
                        double tau, Rng* rng, GateMode mode) {
  check_token_matrix(feat, "predict_mask input");
  const std::size_t n = feat.shape()[0];
  const std::size_t d = feat.shape()[1];
  if (params.local_weight.shape() != Shape{d, d / 2}) {
    throw ShapeError("mask predictor weights do not match tokens of width " +
                     std::to_string(d));
  }

  Tensor local = add(matmul(feat, params.local_weight), params.local_bias);
  // Global context = average of the local features over all tokens, then
  // rebroadcast so every token sees the same summary row.
  Tensor global = mean_axis(local, 0, true);
  Tensor global_rows = add(global, Tensor::zeros({n, d / 2}));
  Tensor logits = add(matmul(concat({local, global_rows}, 1),
                             params.decide_weight),
                      params.decide_bias);

  MaskResult result;
  result.pi = softmax_last(logits);
  if (mode == GateMode::kArgmax) {
    // Deterministic gate: keep wherever the keep probability is at least the
    // drop probability. No randomness is consumed.
    const std::vector<double>& p = result.pi.values();
    std::vector<double> gate(n);
    for (std::size_t r = 0; r < n; ++r) {
      gate[r] = (p[2 * r] >= p[2 * r + 1]) ? 1.0 : 0.0;
    }
    result.keep = Tensor::from({n, 1}, gate);
  } else {
    if (rng == nullptr) {
      throw NumericError("mask sampling needs an RNG");
    }
    Tensor sample =
        gumbel_softmax(logits, tau, mode == GateMode::kSample, *rng);
    result.keep = slice(sample, 1, 0, 1);
  }
  result.bits.resize(n);
  const std::vector<double>& k = result.keep.values();
  for (std::size_t r = 0; r < n; ++r) {
    result.bits[r] = (k[r] >= 0.5) ? 1 : 0;
  }
  return result;
}

Tensor prune(const Tensor& feat, const Tensor& keep) {
  check_token_matrix(feat, "prune input");
  if (keep.shape() != Shape{feat.shape()[0], 1}) {
    throw ShapeError("prune gate must be [N, 1] matching the token count");
  }
  return mul(feat, keep);
}

std::array<Tensor, 2> pair_attention(const Tensor& feat_a,
                                     const Tensor& feat_b,
                                     const PairAttentionParams& params) {
  check_token_matrix(feat_a, "pair_attention input");
  if (feat_b.shape() != feat_a.shape()) {
    throw ShapeError("pair_attention inputs must have equal shapes");
  }
  const std::size_t n = feat_a.shape()[0];
  const std::size_t d = feat_a.shape()[1];

  // The pair forms a 2-token sequence at every position.
  Tensor x = concat({reshape(feat_a, {n, 1, d}), reshape(feat_b, {n, 1, d})},
                    1);
  Tensor q = matmul(x, params.wq);
  Tensor k = matmul(x, params.wk);
  Tensor v = matmul(x, params.wv);
  Tensor attn = softmax_last(
      scale(matmul(q, transpose(k, {0, 2, 1})), 1.0 / std::sqrt(double(d))));
  Tensor z = matmul(attn, v);
  Tensor h = add(matmul(relu(add(matmul(z, params.w0), params.b0)), params.w1),
                 params.b1);
  return {reshape(slice(h, 1, 0, 1), {n, d}),
          reshape(slice(h, 1, 1, 1), {n, d})};
}

Tensor substitute_masked(const Tensor& h_own, const Tensor& h_partner,
                         const Tensor& keep_own, const Tensor& keep_partner) {
  check_token_matrix(h_own, "substitute input");
  if (h_partner.shape() != h_own.shape()) {
    throw ShapeError("substitute inputs must have equal shapes");
  }
  Tensor one = Tensor::scalar(1.0);
  Tensor fallback = add(mul(keep_partner, h_partner),
                        mul(sub(one, keep_partner), h_own));
  return add(mul(keep_own, h_own), mul(sub(one, keep_own), fallback));
}

Tensor modality_aware_forward(const std::array<Tensor, 4>& feats,
                              const MaskPredictorParams& predictor,
                              const PairAttentionParams& pair14,
                              const PairAttentionParams& pair23, double tau,
                              Rng* rng, GateMode mode) {
  for (const Tensor& f : feats) {
    check_token_matrix(f, "fusion input");
    if (f.shape() != feats[0].shape()) {
      throw ShapeError("fusion inputs must share one shape");
    }
  }

  std::array<Tensor, 4> fused;
  // Clinical pairs: (1,4) first, then (2,3); 0-based stream indices.
  const std::array<std::array<std::size_t, 2>, 2> pairs = {{{0, 3}, {1, 2}}};
  for (std::size_t p = 0; p < 2; ++p) {
    const std::size_t ia = pairs[p][0];
    const std::size_t ib = pairs[p][1];
    MaskResult ma = predict_mask(feats[ia], predictor, tau, rng, mode);
    MaskResult mb = predict_mask(feats[ib], predictor, tau, rng, mode);
    auto h = pair_attention(prune(feats[ia], ma.keep),
                            prune(feats[ib], mb.keep),
                            p == 0 ? pair14 : pair23);
    fused[ia] = substitute_masked(h[0], h[1], ma.keep, mb.keep);
    fused[ib] = substitute_masked(h[1], h[0], mb.keep, ma.keep);
  }
  return concat({fused[0], fused[1], fused[2], fused[3]}, 1);
}

}  // namespace masm
