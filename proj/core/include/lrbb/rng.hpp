#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace lrbb {

// Seedable random generator with platform-independent output.
//
// std::mt19937_64's raw stream is pinned by the standard, but the
// distribution adaptors (std::normal_distribution etc.) are not, so this
// class layers fixed transforms on top of the raw stream: 53-bit uniform
// doubles, Box-Muller normals, and rejection-sampled integers.  Two builds
// on different platforms given the same seed produce identical draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; generates pairs and caches the spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [lo, hi], inclusive, via modulo rejection (unbiased).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1u;
    if (span == 0) return static_cast<std::int64_t>(next_u64());  // full range
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t bound = max - (max % span);  // multiple of span
    std::uint64_t r = next_u64();
    while (r >= bound) r = next_u64();
    return lo + static_cast<std::int64_t>(r % span);
  }

  // Fisher-Yates shuffle with this generator (std::shuffle's draw pattern is
  // implementation-defined, so it is spelled out here).
  template <typename It>
  void shuffle(It first, It last) {
    const auto count = last - first;
    for (auto i = count - 1; i > 0; --i) {
      const auto j = uniform_int(0, i);
      std::swap(first[i], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stateless mix for deriving stream seeds (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace lrbb
