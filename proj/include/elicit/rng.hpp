#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace elicit {

// Stream identifiers for the per-run splitting rule: every consumer of
// randomness in a run draws from its own engine seeded with
// derive_seed(run_seed, stream).
enum class Stream : std::uint64_t {
  flow_init = 1,
  training = 2,
  evaluation = 3,
  oracle = 4,
  mixture = 5,
};

// splitmix64 finalizer over (seed, stream).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, Stream stream)
      : engine_(derive_seed(seed, static_cast<std::uint64_t>(stream))) {}

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  // Open interval (0, 1).
  double uniform() {
    double u;
    do {
      u = std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
    } while (u <= 0.0);
    return u;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double gumbel() { return -std::log(-std::log(uniform())); }
  // Shape-rate parameterization.
  double gamma(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }
  int binomial(int trials, double p) {
    return std::binomial_distribution<int>(trials, p)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::vector<double> normals(std::size_t n) {
    std::vector<double> out(n);
    for (double& v : out) v = normal();
    return out;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace elicit
