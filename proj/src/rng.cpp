#include "bimanual/rng.hpp"

namespace bimanual {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t Rng::index(std::size_t n) {
  // Rejection-free for our purposes: n is always tiny compared with 2^64.
  return static_cast<std::size_t>(engine_() % n);
}

std::vector<double> Rng::normal_vector(std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = normal_(engine_);
  return v;
}

Rng Rng::derive(std::uint64_t key) const { return Rng(mix_seed(seed_, key)); }

}  // namespace bimanual
