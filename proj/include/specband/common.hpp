#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace specband {

// Error classes map onto the CLI exit-code partition: config -> 2, data -> 3,
// divergence -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stable derivation of per-stream seeds (per class, per run, per layer).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t s = seed;
  splitmix64(s);
  s ^= 0x9e3779b97f4a7c15ULL * (stream + 1);
  return splitmix64(s);
}

// mt19937_64 is fully specified by the standard; the value mappings below are
// hand-rolled because the standard distributions are implementation-defined.
// Everything downstream of a seed is therefore reproducible bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); n > 0. Modulo bias is < 2^-50 for any n that fits in memory.
  std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

  // Box-Muller; caches the second deviate.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Fisher-Yates with the explicit index mapping above.
  template <typename RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// SPECBAND_LOG: 0 = quiet (default), 1 = info, 2 = debug.
inline int log_level() {
  static const int level = [] {
    const char* v = std::getenv("SPECBAND_LOG");
    return v ? std::atoi(v) : 0;
  }();
  return level;
}

}  // namespace specband
