// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace forma::gradcore {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Counter-based uniform in [0,1): same key -> same value, order-independent.
inline float hash_unit(uint64_t key) {
  return float(splitmix64(key) >> 40) * (1.0f / 16777216.0f);
}

/// Deterministic sequential RNG. Gaussian via Box-Muller so the byte stream
/// does not depend on the standard library's distribution implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x6a09e667f3bcc909ull)) {}

  uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  float uniform() { return float(next_u64() >> 40) * (1.0f / 16777216.0f); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  /// integer in [0, n)
  int uniform_int(int n) { return n <= 1 ? 0 : int(next_u64() % uint64_t(n)); }

  float gauss() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    float u1 = uniform();
    float u2 = uniform();
    if (u1 < 1e-12f) u1 = 1e-12f;
    const float r = std::sqrt(-2.0f * std::log(u1));
    const float a = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Independent stream derived from this seed and a label.
  Rng fork(uint64_t stream) const { return Rng(splitmix64(state_ ^ splitmix64(stream))); }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace forma::gradcore
