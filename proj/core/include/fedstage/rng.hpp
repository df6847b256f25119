#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace fedstage {

// Deterministic 64-bit PRNG (splitmix64). Every randomized operation in the
// project draws from an explicitly seeded instance of this generator so that
// results are bit-reproducible across runs and platforms.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  double normal(double mean, double sd) {
    // Box-Muller; u1 pulled into (0, 1].
    const double u1 = 1.0 - next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n). Multiply-shift keeps the mapping deterministic
  // and branch-free; the bias for the n used here (< 2^32) is negligible.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

inline uint64_t hash_string(std::string_view s) {
  // FNV-1a, used to fold identifiers into seed derivations.
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline uint64_t mix_seeds(uint64_t a, uint64_t b) {
  SplitMix64 rng(a ^ (b + 0x9E3779B97F4A7C15ull));
  return rng.next();
}

}  // namespace fedstage
