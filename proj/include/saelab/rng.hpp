#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace saelab {

// SplitMix64 finalizer (Steele, Lea & Flood 2014).
std::uint64_t splitmix64(std::uint64_t x);

// 64-bit FNV-1a of a role label.
std::uint64_t fnv1a64(std::string_view text);

// Seed of the substream (seed, role, index):
//   splitmix64(splitmix64(seed ^ fnv1a64(role)) + index)
std::uint64_t derive_seed(std::uint64_t seed, std::string_view role, std::uint64_t index = 0);

// Deterministic generator: std::mt19937_64 plus portable transforms so that
// streams do not depend on the standard library's distribution classes.
//   uniform(): top 53 bits of one draw, scaled to [0, 1)
//   normal():  Box-Muller on two uniforms, second value cached
//   below(n):  rejection sampling on the top bits, unbiased
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t seed, std::string_view role, std::uint64_t index = 0) {
    return Rng(derive_seed(seed, role, index));
  }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

inline constexpr std::string_view kRngDescription =
    "mt19937_64; substream seed = splitmix64(splitmix64(seed ^ fnv1a64(role)) + index); "
    "uniform = (u64 >> 11) * 2^-53; normal = Box-Muller(u1 in (0,1], u2) cos branch then sin branch; "
    "below(n) = rejection on u64 % n over the largest multiple of n";

}  // namespace saelab
