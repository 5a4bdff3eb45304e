#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace ffts {

/// SplitMix64 generator with explicit, platform-independent transforms.
/// std:: distributions are implementation-defined, so they are not used
/// anywhere a stream must be reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Child seed for a named stream: mixes the master seed, the stream name and
/// any number of indices (client id, round, sample ...).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                          std::initializer_list<std::uint64_t> indices = {});

}  // namespace ffts
