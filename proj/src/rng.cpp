#include "maskdiff/rng.hpp"

#include <cmath>

namespace maskdiff {

namespace {

// splitmix64; used to decorrelate seeds when forking streams.
uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Rng::Rng(uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  // 53 random bits -> [0, 1) with full double resolution.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  MD_CHECK(lo <= hi, "uniform: lo > hi");
  return lo + (hi - lo) * uniform();
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  MD_CHECK(lo <= hi, "uniform_int: lo > hi");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  // Modulo bias is < 2^-63 for the spans used here; being bit-portable
  // matters more than removing it.
  return lo + static_cast<int64_t>(next_u64() % span);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;  // Box-Muller needs log(u1) finite
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

double Rng::normal(double mean, double sd) { return mean + sd * normal(); }

Rng Rng::fork(uint64_t stream) const {
  return Rng(mix64(seed_ ^ mix64(stream)));
}

Rng Rng::fork(std::string_view tag) const { return fork(fnv1a64(tag)); }

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
  MD_CHECK(k >= 0 && k <= n, "sample_without_replacement: k out of range");
  // Partial Fisher-Yates over an index vector; O(n) but n is small here.
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = uniform_int(i, n - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    out.push_back(idx[static_cast<size_t>(i)]);
  }
  return out;
}

namespace detail {
[[noreturn]] void contract_fail(const std::string& msg, const char* file, int line) {
  throw ContractError(msg + " (" + file + ":" + std::to_string(line) + ")");
}
}  // namespace detail

}  // namespace maskdiff
