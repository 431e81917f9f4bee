#pragma once

#include <cmath>
#include <cstdint>

namespace ppgstress {

// SplitMix64 stream. Deterministic across platforms (std:: distributions
// are not, so uniform/normal draws are derived here by hand).
struct Rng {
  uint64_t state = 0x9E3779B97F4A7C15ull;

  explicit Rng(uint64_t seed = 0) : state(seed + 0x9E3779B97F4A7C15ull) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one spare cached per pair
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  uint64_t bounded(uint64_t n) { return next_u64() % n; }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Independent child stream id'ed by tag; lets a generator drop one component
// (e.g. noise) without shifting the draws of the others.
inline Rng fork_rng(uint64_t seed, uint64_t tag) {
  Rng mix(seed ^ (0xD1B54A32D192ED03ull * (tag + 1)));
  return Rng(mix.next_u64());
}

}  // namespace ppgstress
