#include "ringlab/random.hpp"

namespace ringlab {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t SeedStreams::derive(std::string_view name, std::uint64_t index) const {
  // splitmix64 over (seed, name, index)
  std::uint64_t z = seed_ ^ fnv1a(name) ^ (index * 0x9e3779b97f4a7c15ULL);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng SeedStreams::stream(std::string_view name, std::uint64_t index) const {
  std::uint64_t s = derive(name, index);
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

}  // namespace ringlab
