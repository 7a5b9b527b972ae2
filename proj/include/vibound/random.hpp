// Seed derivation and the externalized randomness stream.
//
// Every random quantity in a run is derived from one 64-bit master seed by
// hashing (master, purpose tag, indices) with splitmix64. A fresh
// std::mt19937_64 is then seeded from the derived value, so the draws for step
// t never depend on how many draws earlier steps consumed.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace vibound {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t v : path) h = splitmix64(h ^ splitmix64(v + 0x632BE59BD9B4E019ULL));
  return h;
}

/// Portable uniform/normal sampling on top of mt19937_64. The standard
/// distributions are implementation-defined, which would break bit-exact
/// reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) by rejection (unbiased).
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % bound;
  }

  /// Standard normal via Box-Muller, caching the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
  }

  /// Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Seed of the draws consumed by one example evaluation (reparameterization
/// noise and augmentation). Two evaluations holding the same draw see
/// identical random numbers.
struct ExampleDraw {
  std::uint64_t seed = 0;
};

/// All algorithmic randomness of one training run.
///
/// Derivation scheme (tags are fixed constants):
///   init            -> derive(master, {kInit, init_index})
///   permutation(e)  -> derive(master, {kPermutation, e})
///   draw(t, slot)   -> derive(master, {kExample, t, slot})
///   pair_draw(t, k) -> derive(master, {kPair, t, k})
///   pair selection  -> derive(master, {kPairs})
class EpsilonStream {
 public:
  enum Tag : std::uint64_t { kInit = 1, kPermutation = 2, kExample = 3, kPair = 4, kPairs = 5 };

  explicit EpsilonStream(std::uint64_t master_seed) : master_(master_seed) {}

  std::uint64_t master_seed() const { return master_; }

  std::uint64_t init_seed(std::uint64_t index = 0) const {
    return derive_seed(master_, {kInit, index});
  }

  /// Uniform random permutation of the n training indices for epoch e.
  std::vector<std::size_t> permutation(std::size_t epoch, std::size_t n) const {
    Rng rng(derive_seed(master_, {kPermutation, epoch}));
    return rng.permutation(n);
  }

  /// Draw for the example occupying batch slot `slot` at step t (1-based t).
  ExampleDraw draw(std::size_t t, std::size_t slot) const {
    return {derive_seed(master_, {kExample, t, slot})};
  }

  /// Draw shared by both members of measurement pair k at step t.
  ExampleDraw pair_draw(std::size_t t, std::size_t k) const {
    return {derive_seed(master_, {kPair, t, k})};
  }

  std::uint64_t pair_selection_seed() const { return derive_seed(master_, {kPairs}); }

 private:
  std::uint64_t master_;
};

}  // namespace vibound
