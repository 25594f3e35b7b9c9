#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace bimanual {

/// Explicit random stream. Every stochastic routine takes one by reference so runs
/// are reproducible from a root seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  double uniform() { return unit_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::vector<double> normal_vector(std::size_t n);

  /// Independent stream for a sub-task, derived from this stream's seed and a key.
  Rng derive(std::uint64_t key) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Stateless seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key);

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.index(i)]);
  }
}

}  // namespace bimanual
