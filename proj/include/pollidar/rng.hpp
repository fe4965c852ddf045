#pragma once

#include <cmath>
#include <cstdint>

namespace pollidar {

/// Counter-based random streams. Every draw site derives its own stream from
/// (seed, counter) so results do not depend on evaluation order or thread
/// count.
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in (0,1), never exactly 0.
  double next_double() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller.
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Poisson draw. Knuth product method below lambda=12, Hoermann's PTRS
  /// transformed rejection above it.
  uint64_t next_poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda < 12.0) {
      const double limit = std::exp(-lambda);
      double prod = 1.0;
      uint64_t n = 0;
      do {
        prod *= next_double();
        if (prod <= limit) return n;
        ++n;
      } while (n < 1000);
      return n;
    }
    // PTRS (Hoermann 1993)
    const double b = 0.931 + 2.53 * std::sqrt(lambda);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    const double log_lambda = std::log(lambda);
    for (;;) {
      double u = next_double() - 0.5;
      double v = next_double();
      double us = 0.5 - std::abs(u);
      double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<uint64_t>(k);
      if (k < 0.0 || (us < 0.013 && v > us)) continue;
      double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
      double rhs = k * log_lambda - lambda - std::lgamma(k + 1.0);
      if (lhs <= rhs) return static_cast<uint64_t>(k);
    }
  }
};

/// Mixes a seed with up to three stream coordinates into an independent
/// 64-bit stream key.
inline uint64_t stream_key(uint64_t seed, uint64_t a, uint64_t b = 0,
                           uint64_t c = 0) {
  SplitMix64 mix(seed ^ 0x6a09e667f3bcc909ull);
  mix.state += a * 0x9e3779b97f4a7c15ull;
  mix.state ^= mix.next_u64();
  mix.state += b * 0xc2b2ae3d27d4eb4full;
  mix.state ^= mix.next_u64();
  mix.state += c * 0x165667b19e3779f9ull;
  return mix.next_u64();
}

}  // namespace pollidar
