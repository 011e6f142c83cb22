#pragma once

#include <cmath>
#include <cstdint>

namespace radapt {

/// Counter-based deterministic generator. Each draw hashes (seed, counter)
/// with the SplitMix64 finalizer, so identical seeds produce bit-identical
/// streams on every platform and streams can be split without sharing state.
///
///   out(i) = mix64(seed + (i+1) * 0x9E3779B97F4A7C15)
///
/// mix64 is the standard xor-shift-multiply finalizer with constants
/// 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Multiply-shift reduction; the modulo bias is
  /// below 2^-32 for any n that fits in 32 bits, and determinism is what we
  /// actually rely on.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller. Draws two uniforms per call so the
  /// stream position stays a pure function of the call count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Derive an independent child stream. Children of distinct indices (or of
  /// distinct parents) never collide because the index is hashed into the
  /// child's seed.
  Rng split(std::uint64_t stream_index) const {
    std::uint64_t z = seed_ ^ (0x9E3779B97F4A7C15ULL + stream_index * 0xD1B54A32D192ED03ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace radapt
