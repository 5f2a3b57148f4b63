#pragma once

#include <cstdint>

namespace masm {

/// Counter-based pseudo-random generator (the splitmix64 construction).
///
/// The n-th output is mix64(seed + n * kGamma), so the state is just
/// (seed, counter) and the sequence is bit-identical for a given seed on
/// every platform. All floating-point draws are derived from the integer
/// stream with exact arithmetic only.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kMixA = 0xBF58476D1CE4E5B9ull;
  static constexpr std::uint64_t kMixB = 0x94D049BB133111EBull;

  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * kGamma);
  }

  /// Uniform draw strictly inside (0, 1): ((x >> 11) + 0.5) * 2^-53.
  double next_unit() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  /// Standard Gumbel: g = -log(-log(u)), u in (0, 1).
  double next_gumbel();

  bool next_bernoulli(double p) { return next_unit() < p; }

  /// Integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  /// Independent child stream; the derivation is part of the format contract.
  Rng derived(std::uint64_t tag) const {
    return Rng(mix64(seed_ ^ mix64(tag + kGamma)));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= kMixA;
    z ^= z >> 27;
    z *= kMixB;
    z ^= z >> 31;
    return z;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace masm
