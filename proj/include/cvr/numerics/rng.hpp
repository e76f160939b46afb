#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "cvr/hash.hpp"

namespace cvr {

// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based generator: draw i returns mix(seed + (i + 1) * gamma). The
// whole stream is a pure function of (seed, counter), so every draw is
// reproducible on any platform with 64-bit unsigned arithmetic. Independent
// substreams come from `derive`, which reseeds through the same mixer.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    ++counter_;
    return splitmix64_mix(seed_ + counter_ * kGamma);
  }

  constexpr std::uint64_t seed() const noexcept { return seed_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

  SplitMix64 derive(std::uint64_t stream) const noexcept {
    return SplitMix64(splitmix64_mix(seed_ ^ splitmix64_mix(stream + kGamma)));
  }
  SplitMix64 derive(std::string_view name) const noexcept { return derive(fnv1a(name)); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1); safe for log().
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
      std::uint64_t r = next_u64();
      if (r < limit) return r % n;
    }
  }

  // Box-Muller; uses two draws per call so the counter advance is fixed.
  double normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double gumbel() noexcept { return -std::log(-std::log(uniform_open())); }

  double exponential(double rate) noexcept { return -std::log(uniform_open()) / rate; }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <class It>
  void shuffle(It first, It last) noexcept {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      using std::swap;
      swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace cvr
