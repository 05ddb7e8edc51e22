#pragma once

#include <cmath>
#include <cstdint>

namespace mvmr::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  std::uint64_t z = splitmix64(s);
  s ^= z;
  return splitmix64(s);
}

// Counter-style stream addressed by a key tuple. Streams with distinct keys
// are independent and order-insensitive, so per-SNP / per-replicate draws can
// run in parallel and still replay bit-identically.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(mix(seed, 0x6d767d6dULL)) {}
  Stream(std::uint64_t seed, std::uint64_t k1) : state_(mix(mix(seed, 0x6d767d6dULL), k1)) {}
  Stream(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2)
      : state_(mix(mix(mix(seed, 0x6d767d6dULL), k1), k2)) {}
  Stream(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2, std::uint64_t k3)
      : state_(mix(mix(mix(mix(seed, 0x6d767d6dULL), k1), k2), k3)) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform on the open interval (0, 1).
  double next_double() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; the second deviate of each pair is cached.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Genotype draw: Binomial(2, f) via a single uniform.
  int next_genotype(double f) {
    const double u = next_double();
    const double q = 1.0 - f;
    const double p0 = q * q;
    if (u < p0) return 0;
    if (u < p0 + 2.0 * f * q) return 1;
    return 2;
  }

  // Binomial(2, f) against precomputed integer thresholds (see
  // GenotypeThresholds); avoids per-draw floating point work.
  int next_genotype_fast(std::uint64_t t0, std::uint64_t t1) {
    const std::uint64_t r = next_u64();
    return static_cast<int>(r >= t0) + static_cast<int>(r >= t1);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mvmr::rng
