#pragma once

#include <cstdint>
#include <random>

#include "lrlc/tensor.hpp"

namespace lrlc {

/// Deterministic random source. All sampling goes through explicit mappings of
/// raw 64-bit draws so that a fixed seed reproduces streams bit-for-bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased via rejection.
  std::size_t uniform_index(std::size_t n) {
    require<ConfigError>(n > 0, "uniform_index: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t u;
    do {
      u = next_u64();
    } while (u >= limit);
    return static_cast<std::size_t>(u % n);
  }

  /// Derives an independent stream; used for per-split / per-seed sub-streams.
  Rng fork(std::uint64_t salt) {
    std::uint64_t z = next_u64() ^ (salt + 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, T lo, T hi) {
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<T>(uniform(static_cast<double>(lo), static_cast<double>(hi)));
  }

  template <typename It>
  void shuffle(It first, It last) {
    const std::size_t n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace lrlc
