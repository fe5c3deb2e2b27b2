#ifndef LQHMM_RNG_HPP
#define LQHMM_RNG_HPP

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace lqhmm {

/// Derives a child seed from (parent seed, stream index) via splitmix64
/// mixing, so parallel jobs draw from disjoint deterministic streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t s1, std::uint64_t s2);

/// Deterministic generator. Transforms are implemented by hand (inverse-cdf
/// for discrete draws, Box-Muller for normals) because the standard library
/// distributions are implementation-defined; mt19937_64 output itself is
/// fully specified, so the same seed reproduces the same stream everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per pair of uniforms).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Index drawn from an (unnormalized) nonnegative weight vector.
  int discrete(const Eigen::VectorXd& weights) {
    const double total = weights.sum();
    double u = uniform() * total;
    for (int k = 0; k + 1 < weights.size(); ++k) {
      u -= weights[k];
      if (u < 0.0) return k;
    }
    return static_cast<int>(weights.size()) - 1;
  }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    const int k = static_cast<int>(uniform() * n);
    return k >= n ? n - 1 : k;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace lqhmm

#endif
