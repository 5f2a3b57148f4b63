#include "masm/modality_shift.hpp"

#include <cmath>
#include <string>

#include "masm/errors.hpp"
#include "masm/ops.hpp"

namespace masm {

namespace {

void check_pattern(const ShiftPattern& pattern) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (pattern.source[i].size() != pattern.positions) {
      throw ShapeError("shift pattern stream " + std::to_string(i + 1) +
                       " has " + std::to_string(pattern.source[i].size()) +
                       " entries, expected " +
                       std::to_string(pattern.positions));
    }
  }
  for (std::size_t k = 0; k < pattern.positions; ++k) {
    std::array<bool, 4> seen = {false, false, false, false};
    for (std::size_t i = 0; i < 4; ++i) {
      const std::uint8_t s = pattern.source[i][k];
      if (s >= 4 || seen[s]) {
        throw ShapeError("shift pattern column " + std::to_string(k) +
                         " is not a permutation of the four streams");
      }
      seen[s] = true;
    }
  }
}

std::array<Tensor, 4> apply_pattern(const std::array<Tensor, 4>& feats,
                                    const ShiftPattern& pattern) {
  check_pattern(pattern);
  const Shape& s = feats[0].shape();
  for (const Tensor& f : feats) {
    if (!f.defined() || f.shape().size() != 2 || f.shape() != s) {
      throw ShapeError("shift expects four [N, d] matrices of one shape");
    }
  }
  const std::size_t n = s[0];
  if (n != pattern.positions) {
    throw ShapeError("pattern covers " + std::to_string(pattern.positions) +
                     " positions but streams have " + std::to_string(n));
  }
  Tensor stacked = concat({feats[0], feats[1], feats[2], feats[3]}, 0);
  std::array<Tensor, 4> out;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      idx[k] = std::size_t(pattern.source[i][k]) * n + k;
    }
    out[i] = gather_rows(stacked, idx);
  }
  return out;
}

}  // namespace

ShiftPattern build_pattern(std::size_t positions) {
  if (positions == 0) {
    throw ShapeError("shift pattern needs at least one position");
  }
  // Column permutations in 0-based stream indices (clinical index - 1).
  static const std::uint8_t kCycle[3][4] = {
      {0, 1, 2, 3}, {1, 0, 3, 2}, {2, 3, 0, 1}};
  ShiftPattern pattern;
  pattern.positions = positions;
  for (std::size_t i = 0; i < 4; ++i) {
    pattern.source[i].resize(positions);
    for (std::size_t k = 0; k < positions; ++k) {
      pattern.source[i][k] = kCycle[k % 3][i];
    }
  }
  return pattern;
}

std::array<Tensor, 4> shift(const std::array<Tensor, 4>& feats,
                            const ShiftPattern& pattern) {
  return apply_pattern(feats, pattern);
}

std::array<Tensor, 4> unshift(const std::array<Tensor, 4>& feats,
                              const ShiftPattern& pattern) {
  check_pattern(pattern);
  ShiftPattern inverse;
  inverse.positions = pattern.positions;
  for (std::size_t i = 0; i < 4; ++i) {
    inverse.source[i].resize(pattern.positions);
  }
  for (std::size_t k = 0; k < pattern.positions; ++k) {
    for (std::size_t i = 0; i < 4; ++i) {
      inverse.source[pattern.source[i][k]][k] = std::uint8_t(i);
    }
  }
  return apply_pattern(feats, inverse);
}

Tensor mha_block(const Tensor& x, const MhaParams& params) {
  const std::size_t rank = x.shape().size();
  if (rank != 2 && rank != 3) {
    throw ShapeError("mha_block expects [S, d] or [batch, S, d], got rank " +
                     std::to_string(rank));
  }
  Tensor x3 = rank == 2 ? reshape(x, {1, x.shape()[0], x.shape()[1]}) : x;
  const std::size_t b = x3.shape()[0];
  const std::size_t seq = x3.shape()[1];
  const std::size_t d = x3.shape()[2];
  const std::size_t heads = params.heads;
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("width " + std::to_string(d) +
                     " is not divisible by heads = " + std::to_string(heads));
  }
  const std::size_t dn = d / heads;

  Tensor ln = add(mul(layernorm_last(x3), params.ln_gamma), params.ln_beta);
  auto split_heads = [&](const Tensor& t) {
    return transpose(reshape(t, {b, seq, heads, dn}), {0, 2, 1, 3});
  };
  Tensor q = split_heads(matmul(ln, params.wq));
  Tensor k = split_heads(matmul(ln, params.wk));
  Tensor v = split_heads(matmul(ln, params.wv));
  Tensor attn = softmax_last(
      scale(matmul(q, transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(double(dn))));
  Tensor z = reshape(transpose(matmul(attn, v), {0, 2, 1, 3}), {b, seq, d});
  Tensor out = add(x3, matmul(z, params.wo));
  return rank == 2 ? reshape(out, {seq, d}) : out;
}

Tensor modality_shift_forward(const std::array<Tensor, 4>& feats,
                              const MhaParams& spatial, const MhaParams& modal,
                              const ShiftPattern& pattern) {
  std::array<Tensor, 4> shifted = shift(feats, pattern);
  const std::size_t n = feats[0].shape()[0];
  const std::size_t d = feats[0].shape()[1];

  // Spatial attention: the four shifted streams share weights and run as one
  // batch of four N-token sequences.
  Tensor spatial_in = concat({reshape(shifted[0], {1, n, d}),
                              reshape(shifted[1], {1, n, d}),
                              reshape(shifted[2], {1, n, d}),
                              reshape(shifted[3], {1, n, d})},
                             0);
  Tensor spatial_out = mha_block(spatial_in, spatial);
  std::array<Tensor, 4> streams;
  for (std::size_t i = 0; i < 4; ++i) {
    streams[i] = reshape(slice(spatial_out, 0, i, 1), {n, d});
  }
  std::array<Tensor, 4> restored = unshift(streams, pattern);

  // Modality attention: every position is a 4-token sequence.
  Tensor modal_in = concat({reshape(restored[0], {n, 1, d}),
                            reshape(restored[1], {n, 1, d}),
                            reshape(restored[2], {n, 1, d}),
                            reshape(restored[3], {n, 1, d})},
                           1);
  Tensor modal_out = mha_block(modal_in, modal);
  std::vector<Tensor> parts;
  parts.reserve(4);
  for (std::size_t i = 0; i < 4; ++i) {
    parts.push_back(reshape(slice(modal_out, 1, i, 1), {n, d}));
  }
  return concat(parts, 1);
}

}  // namespace masm
