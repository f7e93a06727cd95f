#ifndef M2R_RNG_HPP
#define M2R_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace m2r {

// Seeded RNG with hand-rolled distributions so that streams are
// bitwise-reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derive an independent stream, e.g. per trial or per layer.
  Rng fork(std::uint64_t stream) const {
    return Rng(seed_mix_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  explicit Rng(std::uint64_t seed, int) : engine_(seed) {}

  std::mt19937_64 engine_;
  std::uint64_t seed_mix_ = engine_();  // consumed once; decorrelates forks
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace m2r

#endif  // M2R_RNG_HPP
