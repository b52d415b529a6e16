#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ringlab/advisory/policy.hpp"
#include "ringlab/dti/dti.hpp"
#include "ringlab/sim/ring.hpp"
#include "ringlab/trainer/policy_gradient.hpp"

namespace ringlab::harness {

inline constexpr int kConfigFormatVersion = 1;

struct DriverConfig {
  trainer::DriverSpec::Mode mode = trainer::DriverSpec::Mode::Sampled;
  bool noise = true;
  double delay = 2.0;   // fixed mode only
  double offset = 0.0;  // fixed mode only

  trainer::DriverSpec spec() const;
};

struct DtiRunConfig {
  dti::TraitAxis axis = dti::TraitAxis::Offset;
  dti::DtiConfig model;
  std::size_t dataset_size = 10000;
  std::size_t windows_per_episode = 10;
  double test_fraction = 0.2;
  std::string dataset;          // path; generated when empty
  std::string delay_archive;    // PeRP conditioning
  std::string offset_archive;
};

struct SweepConfig {
  std::vector<advisory::PolicyKind> policies{advisory::PolicyKind::Pcp, advisory::PolicyKind::Rp,
                                             advisory::PolicyKind::Perp, advisory::PolicyKind::Tarp};
  std::vector<int> deltas{50, 70, 100};
  std::vector<double> offsets{driver::kOffsetChoices.begin(), driver::kOffsetChoices.end()};
  std::string archive_dir;
};

struct RunConfig {
  int format_version = kConfigFormatVersion;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out = "runs";
  advisory::PolicyKind policy = advisory::PolicyKind::Pcp;
  int delta = 50;
  double amax = 35.0;
  bool greedy = true;
  std::size_t eval_episodes = 100;
  int workers = 1;

  sim::RingConfig ring;
  trainer::TrainConfig train;
  trainer::RewardParams reward;
  DriverConfig driver;
  DtiRunConfig dti;
  SweepConfig sweep;

  // Throws ConfigError naming the offending key.
  void validate() const;
  advisory::ActionGrid grid() const { return advisory::ActionGrid::make(amax); }
  // FNV-1a of the canonical INI text.
  std::uint64_t hash() const;
};

// INI with [run], [ring], [idm], [train], [reward], [driver], [dti] and
// [sweep] sections. Unknown sections or keys are rejected.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::filesystem::path& path);
void write_run_config(const RunConfig& cfg, std::ostream& out);

}  // namespace ringlab::harness
