#ifndef RANKMOE_RNG_HPP
#define RANKMOE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace rankmoe {

// Deterministic random source. Draws go through fixed bit-level conversions
// rather than std:: distribution objects, whose algorithms vary between
// standard library implementations; output is therefore identical across
// platforms for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Index draw proportional to the given nonnegative weights.
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  // Standard exponential via inversion.
  double exponential() {
    double u = uniform();
    // uniform() can return exactly 0; nudge to keep the log finite.
    if (u <= 0.0) u = 0x1.0p-53;
    return -std::log1p(-u);
  }

  // Seed for an independent substream, derived from this generator's seed by
  // a splitmix64 step so parallel consumers stay reproducible regardless of
  // interleaving.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace rankmoe

#endif  // RANKMOE_RNG_HPP
