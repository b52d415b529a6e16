#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ringlab {

using Rng = std::mt19937_64;

// Named, independently seeded sub-streams derived from a single run seed.
// Each module asks for its own stream ("sim", "policy", "driver", "dti") so
// that re-seeding one does not perturb the others.
class SeedStreams {
 public:
  explicit SeedStreams(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Rng stream(std::string_view name, std::uint64_t index = 0) const;

  std::uint64_t derive(std::string_view name, std::uint64_t index = 0) const;

 private:
  std::uint64_t seed_;
};

std::uint64_t fnv1a(std::string_view text);

}  // namespace ringlab
