#pragma once

#include <cmath>
#include <cstdint>

namespace icjm {

// Deterministic generator with cheap stream splitting. Samplers are written
// out by hand so that artifacts are byte-identical across standard libraries
// and across replication-parallelism degrees.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Rng(mix(seed + 0x632be59bd9b4e019ULL * (stream_id + 1)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal(double mean = 0.0, double sd = 1.0) {
    // Box-Muller, cosine branch only (keeps the stream position predictable)
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 60.0) {
      const double limit = std::exp(-mean);
      int k = 0;
      double prod = uniform();
      while (prod > limit) {
        ++k;
        prod *= uniform();
      }
      return k;
    }
    // large means: split recursively, exact in distribution
    const int k1 = poisson(mean / 2.0);
    return k1 + poisson(mean - mean / 2.0);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace icjm
