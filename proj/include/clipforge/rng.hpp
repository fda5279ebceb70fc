#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

#include "clipforge/common.hpp"

namespace clipforge {

// splitmix64: used for seeding and for deriving independent streams from
// (seed, tag...) tuples. Fully specified, so results are identical on every
// platform, which the byte-identical-output guarantees depend on.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256** by Blackman & Vigna, seeded via splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  // Derives an independent stream from a seed plus context words (e.g. phase,
  // epoch, video index). Mixing each word through splitmix64 decorrelates
  // streams whose tuples differ in any position.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> words) {
    std::uint64_t acc = seed;
    for (std::uint64_t w : words) {
      std::uint64_t mix = acc ^ (w + 0x9e3779b97f4a7c15ull);
      acc = splitmix64(mix);
    }
    return Rng(acc);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1): top 53 bits scaled by 2^-53.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in the open interval (0, 1); safe to pass through log().
  double uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below requires n > 0");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~0ull - (~0ull % n + 1) % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x > limit);
    return x % n;
  }

  // Standard normal via Box-Muller (deterministic; caches the second draw).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform_open();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang squeeze; shapes below one are lifted
  // with the standard boost Gamma(a) = Gamma(a+1) * U^(1/a).
  double gamma(double shape) {
    require(shape > 0.0, "gamma shape must be positive");
    if (shape < 1.0) {
      const double u = uniform_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Beta(a, a) as G1 / (G1 + G2) with independent Gamma(a) draws.
  double beta_symmetric(double alpha) {
    const double g1 = gamma(alpha);
    const double g2 = gamma(alpha);
    const double sum = g1 + g2;
    if (sum <= 0.0) return 0.5;  // both draws underflowed (tiny alpha)
    return g1 / sum;
  }

  // Standard Gumbel noise -log(-log U), U in (0,1).
  double gumbel() { return -std::log(-std::log(uniform_open())); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4] = {};
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace clipforge
