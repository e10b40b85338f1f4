#pragma once

#include <cmath>
#include <cstdint>

namespace crds {

// Self-contained counter-free PRNG so that draws are identical across
// platforms and standard libraries. splitmix64 core, Box-Muller normals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Derive an independent stream from a seed and up to two stream tags.
  static Rng derive(uint64_t seed, uint64_t stream, uint64_t counter = 0) {
    Rng r(seed);
    r.state_ = mix(mix(mix(seed) ^ stream) ^ counter);
    return r;
  }

  uint64_t next_u64() {
    state_ += 0x9E3779B97f4A7C15ull;
    return mix_out(state_);
  }

  // Uniform in [0,1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  int range(int lo, int hi_inclusive) {
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(6.283185307179586476925286766559 * u2);
    have_spare_ = true;
    return mag * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9E3779B97f4A7C15ull;
    return mix_out(z);
  }
  static uint64_t mix_out(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace crds
