#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace hfrl {

// SplitMix64 finalizer, used to derive independent stream seeds from a
// (seed, tag) pair so per-agent and per-lane streams never collide.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seeded random stream. The engine is std::mt19937_64 (fully specified by
// the standard); the distributions below are written out by hand because the
// standard library distributions are implementation-defined and would break
// bit-exact reproducibility across toolchains.
class RngStream {
 public:
  RngStream() : engine_(0) {}
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}
  RngStream(std::uint64_t seed, std::uint64_t tag) : engine_(mix_seed(seed, tag)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (one value per call, no caching so the
  // stream position depends only on the call count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Exponential with the given rate (events per unit time).
  double exponential(double rate) {
    if (rate <= 0.0) throw std::invalid_argument("exponential: rate must be positive");
    return -std::log1p(-uniform()) / rate;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Unbiased integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("index: empty range");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  // Draws an index from non-negative weights (need not be normalized).
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw std::invalid_argument("categorical: weights sum to zero");
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (u < weights[i]) return i;
      u -= weights[i];
    }
    // Rounding fell off the end: return the last positive weight.
    for (std::size_t i = weights.size(); i-- > 0;)
      if (weights[i] > 0.0) return i;
    return 0;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hfrl
