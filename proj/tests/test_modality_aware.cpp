#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "masm/modality_aware.hpp"
#include "masm/ops.hpp"
#include "masm/rng.hpp"
#include "oracle_helpers.hpp"

using namespace masm;

namespace {

Tensor weighted_sum(const Tensor& t, unsigned salt) {
  std::mt19937 gen(1000 + salt);
  Tensor w = Tensor::from(t.shape(), oracle::random_values(t.size(), gen));
  return sum_all(mul(t, w));
}

MaskPredictorParams make_predictor(std::size_t d, std::mt19937& gen) {
  return MaskPredictorParams{
      Tensor::param({d, d / 2}, oracle::random_values(d * (d / 2), gen)),
      Tensor::param({d / 2}, oracle::random_values(d / 2, gen)),
      Tensor::param({d, 2}, oracle::random_values(2 * d, gen)),
      Tensor::param({2}, oracle::random_values(2, gen))};
}

PairAttentionParams make_pair(std::size_t d, std::mt19937& gen) {
  return PairAttentionParams{
      Tensor::param({d, d}, oracle::random_values(d * d, gen)),
      Tensor::param({d, d}, oracle::random_values(d * d, gen)),
      Tensor::param({d, d}, oracle::random_values(d * d, gen)),
      Tensor::param({d, 4 * d}, oracle::random_values(4 * d * d, gen)),
      Tensor::param({4 * d}, oracle::random_values(4 * d, gen)),
      Tensor::param({4 * d, d}, oracle::random_values(4 * d * d, gen)),
      Tensor::param({d}, oracle::random_values(d, gen))};
}

std::vector<Tensor> collect(const MaskPredictorParams& p) {
  return {p.local_weight, p.local_bias, p.decide_weight, p.decide_bias};
}

std::vector<Tensor> collect(const PairAttentionParams& p) {
  return {p.wq, p.wk, p.wv, p.w0, p.b0, p.w1, p.b1};
}

// Scalar transcription of the two-token attention + FFN, one position at a
// time, independent of the tensor ops.
void ref_pair_attention(const std::vector<double>& a,
                        const std::vector<double>& b,
                        const PairAttentionParams& p, std::size_t n,
                        std::size_t d, std::vector<double>& out_a,
                        std::vector<double>& out_b) {
  auto vecmat = [](const std::vector<double>& v, const std::vector<double>& m,
                   std::size_t in, std::size_t out) {
    std::vector<double> r(out, 0.0);
    for (std::size_t j = 0; j < out; ++j)
      for (std::size_t i = 0; i < in; ++i) r[j] += v[i] * m[i * out + j];
    return r;
  };
  out_a.assign(n * d, 0.0);
  out_b.assign(n * d, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    std::array<std::vector<double>, 2> tok = {
        std::vector<double>(a.begin() + k * d, a.begin() + (k + 1) * d),
        std::vector<double>(b.begin() + k * d, b.begin() + (k + 1) * d)};
    std::array<std::vector<double>, 2> q, kk, v;
    for (int i = 0; i < 2; ++i) {
      q[i] = vecmat(tok[i], p.wq.values(), d, d);
      kk[i] = vecmat(tok[i], p.wk.values(), d, d);
      v[i] = vecmat(tok[i], p.wv.values(), d, d);
    }
    for (int i = 0; i < 2; ++i) {
      double s[2];
      for (int j = 0; j < 2; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += q[i][c] * kk[j][c];
        s[j] = dot / std::sqrt(double(d));
      }
      const double mx = std::max(s[0], s[1]);
      const double e0 = std::exp(s[0] - mx), e1 = std::exp(s[1] - mx);
      const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
      std::vector<double> z(d);
      for (std::size_t c = 0; c < d; ++c) z[c] = w0 * v[0][c] + w1 * v[1][c];
      std::vector<double> hidden = vecmat(z, p.w0.values(), d, 4 * d);
      for (std::size_t c = 0; c < 4 * d; ++c)
        hidden[c] = std::max(0.0, hidden[c] + p.b0.value_at(c));
      std::vector<double> res = vecmat(hidden, p.w1.values(), 4 * d, d);
      std::vector<double>& dst = (i == 0) ? out_a : out_b;
      for (std::size_t c = 0; c < d; ++c)
        dst[k * d + c] = res[c] + p.b1.value_at(c);
    }
  }
}

}  // namespace

TEST_CASE("mask predictor emits probabilities and consistent gates") {
  std::mt19937 gen(11);
  const std::size_t n = 6, d = 8;
  Tensor feat = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  MaskPredictorParams p = make_predictor(d, gen);

  SUBCASE("probability rows sum to one") {
    MaskResult r = predict_mask(feat, p, 1.0, nullptr, GateMode::kArgmax);
    REQUIRE(r.pi.shape() == Shape{n, 2});
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(r.pi.value_at(2 * k) + r.pi.value_at(2 * k + 1) ==
            doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("argmax gate is deterministic and matches pi") {
    MaskResult r1 = predict_mask(feat, p, 1.0, nullptr, GateMode::kArgmax);
    MaskResult r2 = predict_mask(feat, p, 1.0, nullptr, GateMode::kArgmax);
    REQUIRE(r1.keep.shape() == Shape{n, 1});
    for (std::size_t k = 0; k < n; ++k) {
      const double want =
          r1.pi.value_at(2 * k) >= r1.pi.value_at(2 * k + 1) ? 1.0 : 0.0;
      CHECK(r1.keep.value_at(k) == want);
      CHECK(r2.keep.value_at(k) == r1.keep.value_at(k));
      CHECK(r1.bits[k] == (want == 1.0 ? 1 : 0));
    }
  }

  SUBCASE("sampling consumes two draws per token and yields hard gates") {
    Rng rng(99);
    MaskResult r = predict_mask(feat, p, 1.0, &rng, GateMode::kSample);
    CHECK(rng.position() == 2 * n);
    for (std::size_t k = 0; k < n; ++k) {
      const double g = r.keep.value_at(k);
      CHECK((g == 0.0 || g == 1.0));
      CHECK(r.bits[k] == (g == 1.0 ? 1 : 0));
    }
    Rng replay(99);
    MaskResult r2 = predict_mask(feat, p, 1.0, &replay, GateMode::kSample);
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(r2.keep.value_at(k) == r.keep.value_at(k));
    }
  }

  SUBCASE("sampling without an rng is an error") {
    CHECK_THROWS_AS(predict_mask(feat, p, 1.0, nullptr, GateMode::kSample),
                    NumericError);
  }

  SUBCASE("probability path gradients match finite differences") {
    auto leaves = collect(p);
    auto r = oracle::check_gradients(
        [&] {
          return weighted_sum(
              predict_mask(feat, p, 1.0, nullptr, GateMode::kArgmax).pi, 3);
        },
        leaves);
    CHECK(r.max_rel_err < 1e-5);
  }

  SUBCASE("soft gate gradients match finite differences") {
    auto leaves = collect(p);
    auto r = oracle::check_gradients(
        [&] {
          Rng rng(4242);
          return weighted_sum(
              predict_mask(feat, p, 0.8, &rng, GateMode::kSoftSample).keep,
              4);
        },
        leaves);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("pruning zeroes dropped rows and passes kept rows bit-exactly") {
  std::mt19937 gen(21);
  const std::size_t n = 5, d = 4;
  Tensor feat = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  Tensor keep = Tensor::from({n, 1}, {1.0, 0.0, 1.0, 0.0, 0.0});
  Tensor pruned = prune(feat, keep);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < d; ++c) {
      const double got = pruned.value_at(k * d + c);
      if (keep.value_at(k) == 1.0) {
        CHECK(got == feat.value_at(k * d + c));
      } else {
        CHECK(got == 0.0);
      }
    }
  }
  CHECK_THROWS_AS(prune(feat, Tensor::from({n}, std::vector<double>(n, 1.0))),
                  ShapeError);
}

TEST_CASE("pair attention matches the per-position scalar oracle") {
  std::mt19937 gen(31);
  const std::size_t n = 7, d = 6;
  Tensor a = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  Tensor b = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  PairAttentionParams p = make_pair(d, gen);

  auto h = pair_attention(a, b, p);
  REQUIRE(h[0].shape() == Shape{n, d});
  REQUIRE(h[1].shape() == Shape{n, d});

  std::vector<double> ra, rb;
  ref_pair_attention(a.values(), b.values(), p, n, d, ra, rb);
  for (std::size_t i = 0; i < n * d; ++i) {
    CHECK(h[0].value_at(i) == doctest::Approx(ra[i]).epsilon(1e-10));
    CHECK(h[1].value_at(i) == doctest::Approx(rb[i]).epsilon(1e-10));
  }
}

TEST_CASE("pair attention gradients match finite differences") {
  std::mt19937 gen(41);
  const std::size_t n = 3, d = 4;
  Tensor a = Tensor::param({n, d}, oracle::random_values(n * d, gen));
  Tensor b = Tensor::param({n, d}, oracle::random_values(n * d, gen));
  PairAttentionParams p = make_pair(d, gen);
  std::vector<Tensor> leaves = collect(p);
  leaves.push_back(a);
  leaves.push_back(b);
  auto r = oracle::check_gradients(
      [&] {
        auto h = pair_attention(a, b, p);
        return add(weighted_sum(h[0], 5), weighted_sum(h[1], 6));
      },
      leaves);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("substitution covers all four gate cases") {
  const std::size_t n = 4, d = 3;
  std::mt19937 gen(51);
  Tensor own = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  Tensor partner = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  // Rows: (keep, keep), (keep, drop), (drop, keep), (drop, drop).
  Tensor keep_own = Tensor::from({n, 1}, {1.0, 1.0, 0.0, 0.0});
  Tensor keep_partner = Tensor::from({n, 1}, {1.0, 0.0, 1.0, 0.0});
  Tensor fused = substitute_masked(own, partner, keep_own, keep_partner);
  for (std::size_t c = 0; c < d; ++c) {
    CHECK(fused.value_at(0 * d + c) == own.value_at(0 * d + c));
    CHECK(fused.value_at(1 * d + c) == own.value_at(1 * d + c));
    CHECK(fused.value_at(2 * d + c) == partner.value_at(2 * d + c));
    CHECK(fused.value_at(3 * d + c) == own.value_at(3 * d + c));
  }
}

TEST_CASE("fusion layer output width and pair independence") {
  std::mt19937 gen(61);
  const std::size_t n = 8, d = 8;
  std::array<Tensor, 4> feats;
  for (auto& f : feats)
    f = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  MaskPredictorParams pred = make_predictor(d, gen);
  PairAttentionParams p14 = make_pair(d, gen);
  PairAttentionParams p23 = make_pair(d, gen);

  Rng rng(7);
  Tensor fused = modality_aware_forward(feats, pred, p14, p23, 1.0, &rng,
                                        GateMode::kSample);
  REQUIRE(fused.shape() == Shape{n, 4 * d});
  // Four masks, two draws per token each.
  CHECK(rng.position() == 4 * 2 * n);

  // Perturbing stream 2 must leave the (1,4) pair's output untouched: the
  // pairs share no activations and the draw order gives (1,4) the same noise.
  std::array<Tensor, 4> feats2 = feats;
  feats2[1] = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  Rng rng2(7);
  Tensor fused2 = modality_aware_forward(feats2, pred, p14, p23, 1.0, &rng2,
                                         GateMode::kSample);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < d; ++c) {
      CHECK(fused2.value_at(k * 4 * d + c) == fused.value_at(k * 4 * d + c));
      CHECK(fused2.value_at(k * 4 * d + 3 * d + c) ==
            fused.value_at(k * 4 * d + 3 * d + c));
    }
  }

  // Inference path needs no randomness and is repeatable.
  Tensor inf1 = modality_aware_forward(feats, pred, p14, p23, 1.0, nullptr,
                                       GateMode::kArgmax);
  Tensor inf2 = modality_aware_forward(feats, pred, p14, p23, 1.0, nullptr,
                                       GateMode::kArgmax);
  for (std::size_t i = 0; i < inf1.size(); ++i) {
    CHECK(inf1.value_at(i) == inf2.value_at(i));
  }
}

TEST_CASE("fusion layer soft-mode gradients match finite differences") {
  std::mt19937 gen(71);
  const std::size_t n = 2, d = 4;
  std::array<Tensor, 4> feats;
  for (auto& f : feats)
    f = Tensor::param({n, d}, oracle::random_values(n * d, gen));
  MaskPredictorParams pred = make_predictor(d, gen);
  PairAttentionParams p14 = make_pair(d, gen);
  PairAttentionParams p23 = make_pair(d, gen);

  std::vector<Tensor> leaves = collect(pred);
  for (const Tensor& t : collect(p14)) leaves.push_back(t);
  for (const Tensor& t : collect(p23)) leaves.push_back(t);
  for (const Tensor& f : feats) leaves.push_back(f);

  auto r = oracle::check_gradients(
      [&] {
        Rng rng(13579);  // same noise on every probe evaluation
        return weighted_sum(modality_aware_forward(feats, pred, p14, p23, 1.0,
                                                   &rng, GateMode::kSoftSample),
                            7);
      },
      leaves);
  CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("straight-through gate keeps the predictor trainable") {
  std::mt19937 gen(81);
  const std::size_t n = 6, d = 8;
  std::array<Tensor, 4> feats;
  for (auto& f : feats)
    f = Tensor::from({n, d}, oracle::random_values(n * d, gen));
  MaskPredictorParams pred = make_predictor(d, gen);
  PairAttentionParams p14 = make_pair(d, gen);
  PairAttentionParams p23 = make_pair(d, gen);

  Tape tape;
  {
    TapeScope scope(tape);
    Rng rng(3);
    Tensor fused = modality_aware_forward(feats, pred, p14, p23, 1.0, &rng,
                                          GateMode::kSample);
    tape.backward(weighted_sum(fused, 8));
  }
  for (const Tensor& t : collect(pred)) {
    REQUIRE(t.has_grad());
    double mag = 0.0;
    for (double g : t.grad()) mag += std::abs(g);
    CHECK(mag > 0.0);
  }
}
