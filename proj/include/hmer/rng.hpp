#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hmer/geometry.hpp"

namespace hmer {

// splitmix64; used to derive independent stream seeds from a master seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. std::mt19937_64 has a standard-mandated sequence; the
// distribution transforms below are our own so streams are reproducible
// across standard libraries (std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) { return n == 0 ? 0 : gen_() % n; }

  // Standard normal via Box-Muller (no cached spare: keeps the stream simple).
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace hmer
