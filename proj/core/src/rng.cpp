#include "lqhmm/rng.hpp"

namespace lqhmm {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed;
  std::uint64_t a = splitmix64(state);
  state ^= stream * 0xda942042e4dd58b5ULL;
  std::uint64_t b = splitmix64(state);
  return a ^ (b + 0x9e3779b97f4a7c15ULL);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t s1, std::uint64_t s2) {
  return mix_seed(mix_seed(seed, s1), s2);
}

}  // namespace lqhmm
