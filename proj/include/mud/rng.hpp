#pragma once

// Deterministic random streams for the simulator.
//
// Everything random (payload bits, carrier phases, delays, noise,
// interleaver permutations) is drawn from SplitMix64 streams derived from a
// single experiment seed, so a (config, seed) pair fully determines every
// result regardless of worker count. The standard library's distributions
// and std::shuffle are implementation-defined, so they are not used anywhere
// results must be reproducible.

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace mud {

using cplx = std::complex<double>;

// SplitMix64 (Steele, Lea, Flood 2014).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform on {0, ..., bound-1} by modulo draw.
  std::uint32_t below(std::uint32_t bound) {
    return static_cast<std::uint32_t>(next() % bound);
  }

  std::uint8_t bit() { return static_cast<std::uint8_t>(next() >> 63); }

  double angle() { return uniform() * 2.0 * std::numbers::pi; }

  // Standard normal via Box-Muller; generates a pair, caches the second.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
    const double t = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  // Complex sample with independent standard-normal components.
  cplx gaussian_cplx() {
    const double re = gaussian();
    const double im = gaussian();
    return {re, im};
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Child seed for a (purpose, index...) path under a parent seed. Pure
// integer mixing, identical on every platform.
inline std::uint64_t substream(std::uint64_t seed,
                               std::initializer_list<std::uint64_t> path) {
  SplitMix64 g(seed);
  std::uint64_t acc = g.next();
  for (std::uint64_t p : path) {
    SplitMix64 h(acc ^ (p + 0x9e3779b97f4a7c15ull));
    acc = h.next();
  }
  return acc;
}

// Stream purpose tags used across the library.
namespace tag {
inline constexpr std::uint64_t pilot = 1;
inline constexpr std::uint64_t interleaver = 2;
inline constexpr std::uint64_t payload = 3;
inline constexpr std::uint64_t phase = 4;
inline constexpr std::uint64_t delay = 5;
inline constexpr std::uint64_t noise = 6;
inline constexpr std::uint64_t channel = 7;
}  // namespace tag

}  // namespace mud
