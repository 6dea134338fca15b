#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace unbiased {

/*
 * Reproducible random source.
 *
 * The engine is std::mt19937_64, whose output sequence is fixed by the C++
 * standard for a given seed. The standard distributions are implementation
 * defined, so every derived variate is produced here by an explicit transform:
 *   uniform01  : top 53 bits of one engine draw, scaled into [0, 1)
 *   gaussian   : Box-Muller on two uniform01 draws, second value cached
 *   index(n)   : rejection sampling on the engine output (no modulo bias)
 * The same seed therefore yields the same variates on every conforming
 * platform.
 */
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t draw = engine_();
    while (draw >= limit) draw = engine_();
    return draw % n;
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace unbiased
