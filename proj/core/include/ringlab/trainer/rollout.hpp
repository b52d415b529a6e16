#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ringlab/advisory/policy.hpp"
#include "ringlab/driver/driver.hpp"
#include "ringlab/metrics/metrics.hpp"
#include "ringlab/sim/ring.hpp"

namespace ringlab::trainer {

struct RewardParams {
  double speed = 1.0;
  double headway = 1.0;
  double action = 0.5;
  // +1 rewards advice changes, -1 penalises them.
  double action_sign = -1.0;

  void validate() const;
};

double reward_pc(const sim::FleetState& fleet);
double reward_rp(std::span<const double> speeds, std::span<const double> headways, double advice,
                 double advice_prev, const RewardParams& params);
double reward_rp(const sim::FleetState& fleet, double advice, double advice_prev, const RewardParams& params);

struct DriverSpec {
  enum class Mode { PerfectFollower, Fixed, Sampled };
  Mode mode = Mode::PerfectFollower;
  driver::DriverTraits traits;  // used by Fixed
  bool noise = true;            // used by Sampled

  static DriverSpec perfect() { return {}; }
  static DriverSpec fixed(driver::DriverTraits t) { return {Mode::Fixed, t, t.noise_enabled}; }
  static DriverSpec sampled(bool noise = true) { return {Mode::Sampled, {}, noise}; }
};

enum class RewardKind { PolicyCentric, Residual };

using LatentFactory = std::function<std::unique_ptr<advisory::LatentSource>(const driver::DriverTraits&)>;

// Builds the TA-RP latent source from the episode's true traits.
LatentFactory trait_latents();

struct RolloutSpec {
  advisory::PolicyKind kind = advisory::PolicyKind::Pcp;
  int hold_steps = 50;
  const advisory::PolicyModel* base = nullptr;
  const advisory::PolicyModel* residual = nullptr;
  LatentFactory latent;
  advisory::ActMode mode = advisory::ActMode::Greedy;
  DriverSpec driver;
  RewardKind reward = RewardKind::PolicyCentric;
  RewardParams reward_params;
  double collision_penalty = -100.0;
  double gamma = 0.99;
  bool record = false;
  bool capture_observations = false;
};

struct Transition {
  std::vector<double> input;
  std::size_t action = 0;
  double reward = 0.0;  // summed over the hold period
  double ret = 0.0;     // discounted return-to-go over decisions
};

struct RolloutBatch {
  std::vector<Transition> transitions;
  double episode_return = 0.0;  // undiscounted sum of decision rewards
  bool collision = false;
};

struct Episode {
  RolloutBatch batch;
  sim::EpisodeRecord record;     // filled when spec.record is set
  std::vector<double> ego_speeds;  // advising phase only
  std::vector<double> advice;      // advising phase only
  std::vector<advisory::Observation> observations;  // ego view before each advised step
  metrics::SpeedStats stats;
  driver::DriverTraits traits;
  bool perfect_follower = true;
  std::uint64_t warmup_seed = 0;
  std::size_t decisions = 0;
};

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

// One episode: warm-up, then cfg.horizon advised steps with a decision every
// hold_steps (ceil(H / delta) decisions). Streams "sim", "sim.noise",
// "policy" and "driver" are derived from `seed`.
Episode rollout(const RolloutSpec& spec, const sim::RingConfig& cfg, std::uint64_t seed);

}  // namespace ringlab::trainer
