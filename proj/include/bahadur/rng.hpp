#pragma once

#include <cstdint>
#include <cmath>

namespace bahadur {

// Splittable counter-style generator (splitmix64 core). Streams derived via
// derive(seed, stream) are independent of each other and stable across
// platforms, which keeps replication output byte-identical for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    Rng r(mix(seed + 0x9e3779b97f4a7c15ULL * (stream + 1)));
    r.next_u64();
    return r;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // uniform on [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform integer on [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // modulo bias negligible for n << 2^64; n here is a sample size
    return next_u64() % n;
  }

  // standard normal via Box-Muller; spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double rad = std::sqrt(-2.0 * std::log(u1));
    double ang = 6.283185307179586476925286766559 * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bahadur
