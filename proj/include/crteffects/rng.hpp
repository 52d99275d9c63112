#pragma once

#include <cstdint>
#include <random>

namespace crt {

// Deterministic stream-indexed RNG: every replicate (and the truth
// computation) gets its own engine seeded from (seed, stream), so results do
// not depend on evaluation order or thread count. Distribution transforms are
// done by hand because the std::distribution objects are not guaranteed to be
// reproducible across standard library implementations.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);

  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal(double mean, double sd); // Box-Muller, consumes two uniforms
  bool bernoulli(double p);

 private:
  std::mt19937_64 gen_;
};

}  // namespace crt
