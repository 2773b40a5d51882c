#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

namespace switchts {

/// Mixes a seed and a stream index into an independent 64-bit seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic random source. The engine is std::mt19937_64 (whose output
/// sequence is pinned by the standard); all distributions are generated here
/// rather than through std:: distribution objects, so identical seeds give
/// identical streams on every platform.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  static Rng with_stream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(mix_seed(seed, stream));
  }

  /// Independent generator for a derived stream (per trajectory, per sample).
  Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
      u1 = uniform();
    }
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Index sampled from a probability vector (need not be exactly normalized).
  template <typename Derived>
  int categorical(const Eigen::DenseBase<Derived>& probs) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) total += probs(i);
    if (!(total > 0.0)) throw std::invalid_argument("categorical: probabilities sum to zero");
    double u = uniform() * total;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      u -= probs(i);
      if (u < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
  }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace switchts
