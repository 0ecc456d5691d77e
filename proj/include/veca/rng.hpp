#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace veca {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn stream names into keys.
inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

/// Counter-based generator: output i is a pure function of (key, i).
///
/// A stream is identified by a seed and a name, so "weights" and "budget"
/// streams drawn from the same seed never overlap. Distributions are
/// implemented here rather than with <random> so sequences are identical
/// across standard libraries.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view name)
      : key_(detail::splitmix64(seed ^ detail::splitmix64(detail::fnv1a(name)))) {}

  explicit Rng(std::uint64_t seed = 0) : Rng(seed, "default") {}

  std::uint64_t next_u64() {
    return detail::splitmix64(key_ ^ detail::splitmix64(counter_++ + 0x632BE59BD9B4E019ull));
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-free rejection; n is always small here.
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Normal(0, std) truncated to [-2 std, 2 std] by resampling.
  double truncated_normal(double std) {
    for (;;) {
      const double z = normal();
      if (z >= -2.0 && z <= 2.0) return z * std;
    }
  }

  /// Independent child stream.
  Rng fork(std::string_view name) const {
    Rng r(0, name);
    r.key_ = detail::splitmix64(key_ ^ detail::fnv1a(name));
    return r;
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace veca
