#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace qpmp {

/// Counter-based random numbers keyed by (seed, stream, counter, lane).
///
/// Every draw is a pure function of its key, so a trajectory's noise does
/// not depend on how many other trajectories ran before it or on which
/// thread ran it.
class KeyedRng {
 public:
  KeyedRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t bits(std::uint64_t counter, std::uint64_t lane = 0) const {
    std::uint64_t h = mix(seed_ ^ 0x9E3779B97F4A7C15ULL);
    h = mix(h ^ stream_);
    h = mix(h ^ (counter * 0xD1B54A32D192ED03ULL));
    return mix(h ^ (lane + 0x632BE59BD9B4E019ULL));
  }

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint64_t counter, std::uint64_t lane = 0) const {
    return (static_cast<double>(bits(counter, lane) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on two independent lanes.
  double normal(std::uint64_t counter, std::uint64_t lane = 0) const {
    const double u1 = uniform(counter, 2 * lane);
    const double u2 = uniform(counter, 2 * lane + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace qpmp
