#ifndef SPIDER_RNG_HPP
#define SPIDER_RNG_HPP

#include <cmath>
#include <cstdint>

namespace spider {

// Deterministic RNG with self-contained value extraction. We do not use
// std::uniform_*_distribution because its output is not pinned by the
// standard; the project promises bit-reproducibility for a fixed seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // splitmix burn-in so nearby seeds decorrelate
    next_u64();
    next_u64();
  }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // rejection-free modulo is fine here: n is tiny relative to 2^64
    return next_u64() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller; consumes two uniforms per pair, caches the second
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Independent substream for (seed, stream-id) derivations.
  Rng derive(uint64_t stream) const {
    uint64_t mixed = state_ ^ (0x517cc1b727220a95ULL * (stream + 1));
    return Rng(mixed);
  }

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace spider

#endif
