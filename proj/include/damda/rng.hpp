#pragma once
// Seeded random numbers with platform-independent output. The engine is
// std::mt19937_64 (its sequence is fixed by the standard); the distributions
// are implemented here because the standard library ones are not.

#include <cstdint>
#include <random>
#include <string_view>

namespace damda {

/// splitmix64 finaliser of seed ^ stream; used to derive sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
/// FNV-1a, for seeds keyed by a variable name.
std::uint64_t hash_name(std::string_view name);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Gamma(shape, 1) (Marsaglia-Tsang, with the boost for shape < 1).
  double gamma(double shape);
  double chi_squared(double df) { return 2.0 * gamma(0.5 * df); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace damda
