#pragma once

#include "bpg/core.hpp"

#include <cstdint>
#include <random>

namespace bpg {

/// SplitMix64 finalizer, used to derive independent child keys.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Splittable seeded random source.
///
/// Every generator is identified by a 64-bit key. Children are derived
/// deterministically from (key, stream id), so a run can hand one child to
/// each trajectory or inner loop and stay reproducible regardless of how
/// many draws any other consumer made.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key), engine_(splitmix64(key)) {}

  std::uint64_t key() const { return key_; }

  /// Child generator for an explicit stream id. Does not advance this one.
  Rng child(std::uint64_t stream) const {
    return Rng(splitmix64(key_ ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
  }

  /// Next child in sequence.
  Rng spawn() { return child(next_stream_++); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(engine_); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t key_;
  std::uint64_t next_stream_ = 0;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Inverse-CDF draw from a cumulative probability vector using one uniform.
template <typename Derived>
typename Derived::Index sample_from_cdf(const Eigen::MatrixBase<Derived>& cdf, double u) {
  const auto n = cdf.size();
  for (typename Derived::Index i = 0; i + 1 < n; ++i) {
    if (u < static_cast<double>(cdf(i))) return i;
  }
  // Rounding can leave cdf(n-1) slightly below 1; never land on a zero-mass tail.
  auto i = n - 1;
  while (i > 0 && cdf(i) <= cdf(i - 1)) --i;
  return i;
}

}  // namespace bpg
