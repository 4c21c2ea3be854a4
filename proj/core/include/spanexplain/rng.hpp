#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace spanexplain {

// SplitMix64 mix; used to derive independent stream seeds from one root seed
// so that parameter init, shuffling, dropout and data generation never share
// a generator.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG wrapper. All draws go through explicit integer paths so
// results are reproducible run to run on the same machine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 24 bits of resolution.
  float uniform01() {
    return static_cast<float>(gen_() >> 40) * (1.0f / 16777216.0f);
  }

  double uniform01d() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform01(); }

  // Index in [0, n). n must be positive.
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(gen_() % static_cast<std::uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform01d() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace spanexplain
