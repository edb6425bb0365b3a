#pragma once

// Deterministic RNG helpers. All sampling goes through this wrapper instead of
// std distributions, whose outputs differ between standard library
// implementations; mt19937_64 itself is pinned by the standard, so every
// artifact derived from a seed is byte-stable across platforms.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace tabpo {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  // 53-bit mantissa construction, uniform in [0, 1).
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const double u = uniform01();
    int k = static_cast<int>(u * static_cast<double>(n));
    return k >= n ? n - 1 : k;
  }

  // Index sampled proportionally to non-negative weights (not all zero).
  int weighted_index(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw std::invalid_argument("Rng::weighted_index: zero total mass");
    double r = uniform01() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

  // Independent child stream; derivation depends only on (seed, salt).
  Rng child(std::uint64_t salt) const {
    return Rng(splitmix64(seed_ ^ splitmix64(salt)));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace tabpo
