#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace dtpsr {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based generator: every draw is a pure function of
/// (seed, stream, counter), so results do not depend on call order,
/// thread scheduling or the standard library's distribution code.
///
///   key      = splitmix64(splitmix64(seed) ^ stream)
///   bits(i)  = splitmix64(key ^ splitmix64(i))
///   uniform  = (bits >> 11) * 2^-53            in [0, 1)
///   normal   = Box-Muller on uniform(2i), uniform(2i+1)
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64(splitmix64(seed) ^ stream)) {}
  CounterRng(std::uint64_t seed, std::string_view stream_name)
      : CounterRng(seed, fnv1a64(stream_name)) {}

  constexpr std::uint64_t bits(std::uint64_t i) const {
    return splitmix64(key_ ^ splitmix64(i));
  }
  constexpr double uniform(std::uint64_t i) const {
    return static_cast<double>(bits(i) >> 11) * 0x1.0p-53;
  }
  double normal(std::uint64_t i) const {
    const double u1 = uniform(2 * i);
    const double u2 = uniform(2 * i + 1);
    return std::sqrt(-2.0 * std::log1p(-u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }
  // Uniform integer in [0, n) by multiply-shift.
  constexpr std::uint64_t below(std::uint64_t i, std::uint64_t n) const {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(bits(i)) * n) >> 64);
  }
  constexpr std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
};

/// Sequential view over a CounterRng for code that draws many values in
/// program order (scene generation, initialisation).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream_name)
      : rng_(seed, stream_name) {}
  RngStream(std::uint64_t seed, std::uint64_t stream) : rng_(seed, stream) {}

  double uniform() { return rng_.uniform(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return rng_.normal(counter_++); }
  std::uint64_t below(std::uint64_t n) { return rng_.below(counter_++, n); }
  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }
  std::uint64_t counter() const { return counter_; }

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
};

}  // namespace dtpsr
