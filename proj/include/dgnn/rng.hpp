#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace dgnn {

/// Independent random streams derived from a single root seed.
enum class SeedPurpose : std::uint64_t {
  Init = 1,
  Triplets = 2,
  Split = 3,
  Negatives = 4,
  Synthetic = 5,
  GradCheck = 6,
};

/// splitmix64 finalizer over (root, purpose, stream).
std::uint64_t derive_seed(std::uint64_t root, SeedPurpose purpose,
                          std::uint64_t stream = 0);

/// mt19937_64 with platform-independent integer and real draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace dgnn
