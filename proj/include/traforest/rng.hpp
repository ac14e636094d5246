#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace traforest {

/// Mersenne Twister with hand-rolled distributions, so draws are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n); n > 0.
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  double exponential() { return -std::log1p(-uniform()); }

  bool bernoulli(double p) { return uniform() < p; }

  /// k distinct elements of `pool` (partial Fisher-Yates on a copy), in draw order.
  template <class T>
  std::vector<T> sample(std::span<const T> pool, std::size_t k) {
    std::vector<T> v(pool.begin(), pool.end());
    for (std::size_t i = 0; i < k && i < v.size(); ++i) {
      const std::size_t j = i + static_cast<std::size_t>(index(v.size() - i));
      std::swap(v[i], v[j]);
    }
    v.resize(std::min(k, v.size()));
    return v;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace traforest
