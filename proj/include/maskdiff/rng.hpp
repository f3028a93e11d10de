#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "maskdiff/errors.hpp"

namespace maskdiff {

// Deterministic random source. std::mt19937_64 is bit-stable across
// platforms, but the standard <random> distributions are not, so every draw
// goes through hand-rolled transforms. Forked child streams depend only on
// the parent's seed and the stream id, never on how much the parent has
// already drawn, which keeps derived streams reproducible no matter the call
// order.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform on [0, 1).
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);
  bool bernoulli(double p);
  // Standard normal via Box-Muller (no pair caching, so the consumption
  // pattern is one-call one-result).
  double normal();
  double normal(double mean, double sd);

  Rng fork(uint64_t stream) const;
  Rng fork(std::string_view tag) const;

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(0, i);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  // k distinct values from [0, n), in draw order.
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

// FNV-1a, used for stable stream tags and config hashing.
uint64_t fnv1a64(std::string_view bytes);

}  // namespace maskdiff
