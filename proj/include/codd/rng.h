#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace codd {

// Seeded generator with reproducible draws across platforms: the engine is
// mt19937_64 (bit-specified by the standard) and every distribution used by the
// library is implemented here rather than taken from <random>.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Counter-based stream splitting: the stream is a pure function of the seed
  // and the key tuple, independent of any draws made elsewhere.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  // Index drawn proportionally to nonnegative (unnormalized) weights.
  std::size_t categorical(std::span<const double> weights);

  // Index drawn proportionally to exp(log_weights); -inf entries are never drawn.
  std::size_t categorical_log(std::span<const double> log_weights);

  // Gamma(shape, 1) via Marsaglia-Tsang.
  double gamma(double shape);

  double normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace codd
