#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "fmae/errors.hpp"

namespace fmae {

/// Deterministic random source. All sampling in the library goes through
/// this wrapper instead of the std:: distribution classes, so a fixed seed
/// reproduces the same stream regardless of the standard library build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, bound), bias-free via rejection sampling.
  std::uint64_t uniform_index(std::uint64_t bound) {
    if (bound == 0) throw ContractError("uniform_index: bound must be > 0");
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal deviate (Box-Muller, no cached spare).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Normal deviate with |x| <= 2*sigma, resampled until it fits.
  double truncated_normal(double sigma) {
    for (;;) {
      const double x = normal() * sigma;
      if (std::abs(x) <= 2.0 * sigma) return x;
    }
  }

  /// k distinct indices drawn uniformly from [0, n), returned ascending.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw ContractError("sample_without_replacement: k out of range");
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) {
      const auto j = i + static_cast<int>(uniform_index(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
  }

  /// Independent child stream, e.g. one per cross-validation round.
  Rng spawn() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fmae
