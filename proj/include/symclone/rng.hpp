#pragma once

#include <cstdint>
#include <vector>

#include "symclone/tensor.hpp"

namespace symclone {

/// xoshiro256++ seeded through splitmix64. Output depends only on the seed,
/// never on the platform's <random> implementation.
class SeededRng {
 public:
  using result_type = std::uint64_t;

  explicit SeededRng(std::uint64_t seed);

  std::uint64_t next_u64();
  std::uint64_t operator()() { return next_u64(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [lo, hi], unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  /// Independent generator for a named sub-stream of this seed.
  static SeededRng stream(std::uint64_t seed, std::uint64_t stream_id);

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

Tensor sample_standard_normal(SeededRng& rng, const Shape& shape, DType dtype = DType::f32);

/// Fisher-Yates permutation of 0..n-1 driven by `rng`.
std::vector<std::int64_t> random_permutation(SeededRng& rng, std::int64_t n);

}  // namespace symclone
