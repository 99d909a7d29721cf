#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace canonkit {

/// Deterministic random stream. The engine is std::mt19937_64 (fully specified
/// by the standard); all distribution conversions are done by hand so a seed
/// produces the same values on every build.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0,1) with 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // (0,1), safe under log()
  double uniform_open() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double gumbel() { return -std::log(-std::log(uniform_open())); }

  // uniform integer in [0, n), rejection sampled (unbiased)
  int below(int n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return static_cast<int>(v % un);
  }

 private:
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Splitmix-style derivation of independent substreams from one seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + stream * 0x9e3779b97f4a7c15ULL + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// In-place Fisher-Yates, driven by Rng for reproducibility.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
    const int j = rng.below(i + 1);
    std::swap(v[i], v[static_cast<size_t>(j)]);
  }
}

}  // namespace canonkit
