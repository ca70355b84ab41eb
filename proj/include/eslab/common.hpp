#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace eslab {

/// Query budget of an oracle session was (or would be) exceeded.
struct BudgetExhaustedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Data synthesis failed (non-finite loss after retries).
struct SynthesisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A length-K probability vector. On the simplex when undefended; rounding
/// and top-K defenses may push the sum off 1.
using PredictionVector = std::vector<double>;

// splitmix64; used to derive independent sub-seeds from one master seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random source wrapping the std distributions the project needs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    std::uniform_int_distribution<int64_t> d(lo, hi);
    return d(engine_);
  }
  double gamma(double alpha, double scale = 1.0) {
    std::gamma_distribution<double> d(alpha, scale);
    return d(engine_);
  }
  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(engine_);
  }
  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Canonical base-10 rendering of a double at 17 significant digits.
/// Both the wire protocol and JSON reports go through this so the
/// socket path and the in-process path serialize identically.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace eslab
