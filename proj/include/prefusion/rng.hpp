#ifndef PREFUSION_RNG_HPP
#define PREFUSION_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace prefusion {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Stream tags keep the RNG of each operation independent of the others.
enum class Stream : std::uint64_t {
  kScene = 1,
  kExtrinsics = 2,
  kPriors = 3,
  kInit = 4,
  kSample = 5,
  kCorruption = 6,
};

constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream stream) {
  return mix_seed(mix_seed(seed) ^ static_cast<std::uint64_t>(stream));
}

/**
 * Deterministic random source.
 *
 * std::mt19937_64 has a fully specified output sequence; the distributions
 * below are written out by hand because the standard library ones are
 * implementation defined, and outputs must be identical across toolchains.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, Stream stream) : engine_(derive_seed(seed, stream)) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace prefusion

#endif  // PREFUSION_RNG_HPP
