#pragma once

// Counter-based random streams. The j-th draw of a stream is
// mix64(key + j * golden), i.e. SplitMix64 addressed by (key, counter), so
// any (sample, layer) cell can be generated independently of generation
// order. Samplers are written out here rather than taken from <random>
// because the standard distributions are implementation-defined and the
// simulator promises identical bytes for identical seeds.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace attn_sieve::random {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0) {
  return mix64(mix64(mix64(seed + kGolden) ^ (a * 0xd1b54a32d192ed03ULL)) ^
               (b * 0xabc98388fb8fac03ULL));
}

class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key) : key_(key) {}

  constexpr std::uint64_t next() { return mix64(key_ + (++counter_) * kGolden); }

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform integer in [0, bound), bound > 0.
  std::uint64_t below(std::uint64_t bound) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

  // Standard normal (Box-Muller, one value per pair of uniforms).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // log of a Gamma(shape, 1) variate. Marsaglia-Tsang for shape >= 1; for
  // shape < 1 the boost G(shape) = G(shape + 1) * U^(1/shape) is applied in
  // log space so tiny shapes do not underflow to zero.
  double log_gamma_variate(double shape) {
    if (shape < 1.0) {
      return log_gamma_variate(shape + 1.0) + std::log(uniform()) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x = 0.0;
      double v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return std::log(d * v);
      }
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace attn_sieve::random
