#pragma once

// Reproducible random streams.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are not (their algorithms are
// implementation-defined), so the few we need are written out here:
//   uniform_below   rejection sampling on the raw 64-bit output
//   unit_open       (x >> 11) + 1 scaled by 2^-53, in (0, 1]
//   normal pairs    Box-Muller, cos branch first then sin branch
// Every seeded value in the library (PUF weights, nonces, challenges, latency
// jitter) is drawn through these helpers.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

namespace easysec::rng {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Used only to combine seeds into stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC908ULL;
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x9E3779B97F4A7C15ULL));
  return h;
}

inline std::uint64_t uniform_below(Engine& eng, std::uint64_t bound) {
  // bound == 0 means the full 64-bit range.
  if (bound == 0) return eng();
  const std::uint64_t threshold = (0 - bound) % bound;
  std::uint64_t x = eng();
  while (x < threshold) x = eng();
  return x % bound;
}

/// Inclusive range [lo, hi].
inline std::uint64_t uniform_in(Engine& eng, std::uint64_t lo, std::uint64_t hi) {
  return lo + uniform_below(eng, hi - lo + 1);
}

inline double unit_open(Engine& eng) {
  return static_cast<double>((eng() >> 11) + 1) * 0x1.0p-53;
}

/// Standard normal stream; caches the second Box-Muller output.
class NormalStream {
 public:
  explicit NormalStream(Engine& eng) : eng_(&eng) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = unit_open(*eng_);
    const double u2 = unit_open(*eng_);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  Engine* eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace easysec::rng
