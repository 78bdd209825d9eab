// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace srdepth {

// Deterministic random source. std::mt19937 is fully specified by the
// standard; the distribution mappings below are hand-rolled because the
// std::*_distribution classes are implementation-defined and would break
// bit-reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  // Uniform in [0, 1) with 32-bit resolution.
  double uniform() {
    return static_cast<double>(engine_()) * (1.0 / 4294967296.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; one spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Fisher-Yates; deterministic given the seed and call order.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream; distinct labels give distinct streams.
  Rng fork(std::uint64_t label) {
    std::uint64_t mixed = (static_cast<std::uint64_t>(engine_()) << 32) ^ engine_() ^
                          (label * 0x9E3779B97F4A7C15ull);
    return Rng(mixed);
  }

 private:
  std::mt19937 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace srdepth
