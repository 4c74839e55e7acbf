#pragma once

#include <cstdint>
#include <random>

namespace klagg {

// splitmix64; used to decorrelate (seed, stream) pairs before seeding the engine.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Independent engine for (seed, stream). Replicate workers each own one
/// stream, so draws do not depend on scheduling.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  const std::uint64_t a = splitmix64(state);
  const std::uint64_t b = splitmix64(state);
  std::seed_seq seq{static_cast<unsigned>(a), static_cast<unsigned>(a >> 32),
                    static_cast<unsigned>(b), static_cast<unsigned>(b >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace klagg
