#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

// Seeded random source. Every stochastic component (init, shuffling,
// augmentation, synthetic data) draws from one of these, so a run is fully
// determined by its seed. fork() derives independent substreams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::mt19937_64& engine() { return eng_; }

  std::uint64_t u64() { return eng_(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(eng_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }

  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(eng_);
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, T mean, T stddev) {
    std::normal_distribution<double> d(mean, stddev);
    T* p = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(d(eng_));
  }

  template <typename T>
  void fill_uniform(Tensor<T>& t, T lo, T hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    T* p = t.mutable_data();
    for (std::size_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(d(eng_));
  }

  template <typename V>
  void shuffle(std::vector<V>& v) {
    std::shuffle(v.begin(), v.end(), eng_);
  }

  // Independent substream derived from this source's seed and a stream id.
  Rng fork(std::uint64_t stream) const {
    std::uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ull + stream);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return Rng(x);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace thumbnet
