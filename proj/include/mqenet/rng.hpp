#pragma once

#include <cstdint>

namespace mqenet {

// splitmix64: portable, seedable, identical stream on every platform.
// Used instead of std:: distributions so datasets reproduce bit-exactly
// across compilers and languages.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny vs 2^64, bias < 2^-50.
    return next_u64() % n;
  }

 private:
  std::uint64_t state_;
};

}  // namespace mqenet
