#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace langtail {

/// Named random streams. Each purpose draws from its own counter space so
/// adding draws in one stage never perturbs another.
enum class Stream : std::uint64_t {
  class_layout = 1,
  scene_layout = 2,
  points = 3,
  superpoints = 4,
  entities = 5,
  distill = 6,
  backbone_init = 7,
  kmeans = 8,
  subsample = 9,
  shuffle = 10,
  entity_batch = 11,
  test = 99,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based generator: output i is a keyed hash of the counter, so a
/// stream is fully determined by (seed, index, stream) on every platform.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t index, Stream stream)
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ index) ^ static_cast<std::uint64_t>(stream))) {}

  std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller; no cached second variate so the stream
  /// position is a pure function of the number of calls.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace langtail
