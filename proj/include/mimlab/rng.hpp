#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

namespace mimlab {

/// Seeded generator with platform-independent derived distributions.
///
/// Only the raw 64-bit engine output is taken from the standard library;
/// uniform, integer and normal draws are computed here so that a seed
/// produces the same stream with any standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n);

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; consumes two draws, no cached state.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Normal truncated to [mean - 2 stddev, mean + 2 stddev] by resampling.
  double truncated_normal(double mean, double stddev);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with stream identifiers (splitmix64 finalizer), giving
/// independent reproducible streams such as (seed, step, image).
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  return Rng(derive_seed(seed, stream));
}

}  // namespace mimlab
