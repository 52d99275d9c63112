#include "crteffects/rng.hpp"

#include <cmath>

namespace crt {

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream & 0xffffffffu),
                    static_cast<std::uint32_t>(stream >> 32)};
  gen_.seed(seq);
}

double Rng::uniform() {
  // 53 random bits into [0, 1)
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double sd) {
  // Box-Muller without caching the second deviate: a fixed two-uniform cost
  // per draw keeps the stream layout independent of call history.
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) *
                   std::cos(2.0 * M_PI * u2);
  return mean + sd * z;
}

bool Rng::bernoulli(double p) { return uniform() < p; }

}  // namespace crt
