#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gav {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// FNV-1a 64-bit hash; used for stream names and file digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept;

/// Named substream seed: splitmix64(splitmix64(master ^ fnv1a64(stream)) + index * golden).
/// The same master seed always expands to the same tree of substreams.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) noexcept;

/// Seeded generator with platform-independent derived distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (no cached second value).
  double normal();
  /// Gamma(shape, 1) variate; Marsaglia-Tsang with the shape < 1 boost.
  double gamma(double shape);

 private:
  std::mt19937_64 engine_;
};

}  // namespace gav
