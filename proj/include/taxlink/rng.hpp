#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace taxlink {

// Deterministic randomness for everything trainable. The engine is
// std::mt19937_64, whose output stream is fully specified by the standard;
// the distribution transforms below are hand-rolled because the
// std::*_distribution classes are implementation-defined. Same seed, same
// stream, on any conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t bits() { return engine_(); }

  // Uniform on [0,1) with 53 random mantissa bits.
  double uniform01() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform on {0,...,n-1}. Plain modulo; the bias is ~n/2^64 and n stays
  // desk-scale here.
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(bits() % static_cast<std::uint64_t>(n));
  }

  // Box-Muller, no cached spare so every call consumes exactly two uniforms
  // (plus redraws of the zero u1, probability 2^-53).
  double normal() {
    double u1 = uniform01();
    while (u1 == 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Derived generator for per-item streams (e.g. one walker per start node).
  Rng derive(std::uint64_t salt) const { return Rng(seed_ ^ salt); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Fisher-Yates; std::shuffle is implementation-defined so we roll our own.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace taxlink
