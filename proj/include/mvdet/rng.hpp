#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mvdet {

// Deterministic splitmix64 stream. Used instead of <random> engines and
// distributions so that identical seeds produce identical numbers on every
// platform and standard library.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int64_t(next_u64() % span);
  }

  // Box-Muller. Draws two uniforms per call; the sine branch is discarded so
  // the stream advance is independent of call pairing.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Independent child stream; identical (state, salt) pairs give identical
  // children regardless of how the parent is used afterwards.
  Rng child(uint64_t salt) const {
    uint64_t z = state_ ^ (salt + 0x9e3779b97f4a7c15ULL + (state_ << 6) + (state_ >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  Rng child(std::string_view tag) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
      h ^= uint64_t(uint8_t(c));
      h *= 0x100000001b3ULL;
    }
    return child(h);
  }

  // Fisher-Yates shuffle driven by this stream.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(0, int64_t(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  uint64_t state_;
};

}  // namespace mvdet
