#pragma once

#include <cstdint>

namespace qdawg {

/// Counter-based generator: output n is SplitMix64's finalizer applied to
/// seed + n * 0x9E3779B97F4A7C15 (n starting at 1). Bit-identical on every platform.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal via Box-Muller (cosine branch only).
    double normal();
    /// Poisson variate: inversion for mean < 10, PTRS transformed rejection above.
    std::int64_t poisson(double mean);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace qdawg
