#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace hallucdet {

/// Deterministic random source (xoshiro256++ seeded through splitmix64).
///
/// Every consumer in the library gets its own stream derived from
/// (root seed, purpose label). Derivation depends only on the root seed and
/// the label, never on how much the parent has been consumed, so adding a new
/// consumer can never shift the draws of an existing one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Derive an independent stream for a named purpose.
  Rng stream(std::string_view label) const;

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();

  /// Uniform double in [0, 1).
  double uniform();

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev);

  /// Unbiased uniform integer in [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);

  /// k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
};

}  // namespace hallucdet
