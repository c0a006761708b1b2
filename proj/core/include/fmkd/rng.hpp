#pragma once

#include <cstdint>

namespace fmkd {

/// Seedable portable random generator: xoshiro256++ with SplitMix64 state
/// expansion. The algorithm is pinned (not delegated to <random>) so that
/// parameter initialization and data streams replay bit-for-bit on any
/// platform for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1), 53 mantissa bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [lo, hi], bounds inclusive.
  long uniform_int(long lo, long hi);

  /// Standard normal via the Marsaglia polar method (one spare cached).
  double normal();
  double normal(double mean, double stddev);

  /// Derives a child stream id from a parent seed and a stream tag.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag);

 private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fmkd
