#include "ringlab/trainer/rollout.hpp"

#include <cmath>
#include <optional>

#include "ringlab/error.hpp"

namespace ringlab::trainer {

void RewardParams::validate() const {
  if (speed < 0.0 || headway < 0.0 || action < 0.0) throw ConfigError("reward weights must be >= 0");
  if (action_sign != 1.0 && action_sign != -1.0) throw ConfigError("action_sign must be +1 or -1");
}

double reward_pc(const sim::FleetState& fleet) { return fleet.speed(fleet.ego()); }

double reward_rp(std::span<const double> speeds, std::span<const double> headways, double advice,
                 double advice_prev, const RewardParams& params) {
  if (speeds.size() != headways.size() || speeds.empty()) {
    throw DimensionError("reward_rp needs one speed and one headway per vehicle");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < speeds.size(); ++i) acc += params.speed * speeds[i] - params.headway * headways[i];
  return acc / static_cast<double>(speeds.size()) +
         params.action_sign * params.action * std::abs(advice - advice_prev);
}

double reward_rp(const sim::FleetState& fleet, double advice, double advice_prev, const RewardParams& params) {
  const auto v = fleet.speeds();
  const auto h = fleet.gaps();
  return reward_rp(v, h, advice, advice_prev, params);
}

LatentFactory trait_latents() {
  return [](const driver::DriverTraits& t) -> std::unique_ptr<advisory::LatentSource> {
    return std::make_unique<advisory::TraitLatent>(t);
  };
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

Episode rollout(const RolloutSpec& spec, const sim::RingConfig& cfg, std::uint64_t seed) {
  const SeedStreams streams(seed);
  Episode ep;
  sim::EpisodeRecord* rec = spec.record ? &ep.record : nullptr;
  sim::WarmupResult warm = sim::warmup(cfg, streams.derive("sim"), 16, rec);
  ep.warmup_seed = warm.seed;
  sim::FleetState& fleet = warm.fleet;

  Rng noise = streams.stream("sim.noise");
  Rng policy_rng = streams.stream("policy");
  Rng driver_rng = streams.stream("driver");

  std::optional<driver::SimulatedDriver> human;
  ep.perfect_follower = spec.driver.mode == DriverSpec::Mode::PerfectFollower;
  if (!ep.perfect_follower) {
    if (spec.driver.mode == DriverSpec::Mode::Fixed) {
      ep.traits = spec.driver.traits;
    } else {
      ep.traits = driver::sample_traits(driver_rng);
      ep.traits.noise_enabled = spec.driver.noise;
    }
    human.emplace(ep.traits, driver::FilterLimits{cfg.time_step, cfg.max_speed}, streams.stream("driver.noise"));
  }

  std::unique_ptr<advisory::LatentSource> latent;
  if (spec.latent) latent = spec.latent(ep.traits);
  advisory::AdvisoryController ctl(spec.kind, spec.hold_steps, cfg, spec.base, spec.residual, latent.get(),
                                   spec.mode);

  std::vector<double> rewards;
  double held = sim::kNoAdvice, previous = sim::kNoAdvice;
  ep.ego_speeds.reserve(static_cast<std::size_t>(cfg.horizon));
  ep.advice.reserve(static_cast<std::size_t>(cfg.horizon));
  for (int t = 0; t < cfg.horizon; ++t) {
    ctl.observe(fleet);
    if (spec.capture_observations) ep.observations.push_back(advisory::build_observation(fleet, cfg));
    const std::size_t before = ctl.decisions().size();
    const double advice = ctl.advise(fleet, policy_rng);
    if (ctl.decisions().size() != before) {
      previous = sim::has_advice(held) ? held : advice;
      held = advice;
      rewards.push_back(0.0);
    }
    const double action = human ? human->respond(advice) : advice;
    const sim::EgoCommand cmd =
        sim::has_advice(action) ? sim::EgoCommand{sim::SpeedCommand{action}} : sim::EgoCommand{sim::Autopilot{}};
    const sim::StepResult r = sim::step(fleet, cmd, cfg, noise);
    rewards.back() += spec.reward == RewardKind::PolicyCentric ? reward_pc(fleet)
                                                               : reward_rp(fleet, advice, previous, spec.reward_params);
    ep.ego_speeds.push_back(fleet.speed(fleet.ego()));
    ep.advice.push_back(advice);
    if (rec) sim::append_row(*rec, fleet, advice, action);
    if (r.collision) {
      rewards.back() += spec.collision_penalty;
      ep.batch.collision = true;
      break;
    }
  }

  ep.decisions = rewards.size();
  const std::vector<double> returns = discounted_returns(rewards, spec.gamma);
  for (double r : rewards) ep.batch.episode_return += r;
  if (spec.kind != advisory::PolicyKind::Osl) {
    const auto& decisions = ctl.decisions();
    ep.batch.transitions.reserve(decisions.size());
    for (std::size_t i = 0; i < decisions.size(); ++i) {
      ep.batch.transitions.push_back({decisions[i].decision.input, decisions[i].decision.index, rewards[i], returns[i]});
    }
  }
  ep.stats = metrics::speed_stats(ep.ego_speeds);

  if (rec) {
    rec->metadata["policy"] = std::string(advisory::to_string(spec.kind));
    rec->metadata["hold_steps"] = std::to_string(spec.hold_steps);
    rec->metadata["seed"] = std::to_string(seed);
    rec->metadata["warmup_seed"] = std::to_string(ep.warmup_seed);
    rec->metadata["collision"] = ep.batch.collision ? "1" : "0";
    if (ep.perfect_follower) {
      rec->metadata["driver"] = "perfect";
    } else {
      driver::write_metadata(ep.traits, rec->metadata);
    }
  }
  return ep;
}

}  // namespace ringlab::trainer
