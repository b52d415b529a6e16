#include "ringlab/sim/ring.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "ringlab/error.hpp"

namespace ringlab::sim {

void RingConfig::validate() const {
  if (vehicle_count < 1) throw ConfigError("vehicle_count must be >= 1");
  if (!(circumference > vehicle_count * vehicle_length)) {
    throw ConfigError("circumference must exceed vehicle_count * vehicle_length");
  }
  if (!(vehicle_length > 0.0)) throw ConfigError("vehicle_length must be > 0");
  if (!(time_step > 0.0)) throw ConfigError("time_step must be > 0");
  if (!(max_speed > 0.0)) throw ConfigError("max_speed must be > 0");
  if (!(idm.desired_speed > 0.0 && idm.time_headway > 0.0 && idm.max_accel > 0.0 &&
        idm.comfort_decel > 0.0 && idm.exponent > 0.0 && idm.min_gap > 0.0)) {
    throw ConfigError("all IDM parameters must be > 0");
  }
  if (accel_noise_std < 0.0) throw ConfigError("accel_noise_std must be >= 0");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (!(ego_accel_bound > 0.0)) throw ConfigError("ego_accel_bound must be > 0");
  if (init_speed_spread < 0.0) throw ConfigError("init_speed_spread must be >= 0");
}

double idm_accel(double speed, double leader_speed, double gap, const IdmParams& p) {
  if (!(gap > 0.0)) throw CollisionError("IDM evaluated at non-positive gap " + std::to_string(gap));
  const double approach = speed - leader_speed;
  const double interaction =
      speed * p.time_headway + speed * approach / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
  const double desired_gap = p.min_gap + std::max(0.0, interaction);
  const double free_term = std::pow(speed / p.desired_speed, p.exponent);
  const double gap_term = (desired_gap / gap) * (desired_gap / gap);
  return p.max_accel * (1.0 - free_term - gap_term);
}

double equilibrium_speed(const RingConfig& cfg) {
  const double gap = cfg.circumference / cfg.vehicle_count - cfg.vehicle_length;
  const IdmParams& p = cfg.idm;
  if (gap < p.min_gap) {
    throw ConfigError("infeasible density: spacing gap " + std::to_string(gap) +
                      " m is below the jam gap");
  }
  if (gap == p.min_gap) return 0.0;
  // idm_accel(v, v, gap) is strictly decreasing in v on [0, v0].
  double lo = 0.0, hi = p.desired_speed;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (idm_accel(mid, mid, gap, p) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

FleetState::FleetState(double circumference, double vehicle_length, std::vector<double> odometer,
                       std::vector<double> speed, std::size_t ego)
    : circumference_(circumference),
      vehicle_length_(vehicle_length),
      odometer_(std::move(odometer)),
      speed_(std::move(speed)),
      ego_(ego) {
  if (odometer_.size() != speed_.size() || odometer_.empty()) {
    throw DimensionError("fleet odometer/speed arrays must be non-empty and equal length");
  }
  if (ego_ >= speed_.size()) throw ContractError("ego index outside fleet");
}

double FleetState::position(std::size_t i) const {
  const double p = std::fmod(odometer_[i], circumference_);
  return p < 0.0 ? p + circumference_ : p;
}

double FleetState::gap(std::size_t i) const {
  const std::size_t j = leader(i);
  double lead = odometer_[j];
  if (j <= i) lead += circumference_;
  return lead - odometer_[i] - vehicle_length_;
}

std::vector<double> FleetState::gaps() const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = gap(i);
  return out;
}

bool FleetState::collision_free() const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!(gap(i) > 0.0)) return false;
  }
  return true;
}

struct FleetStepper {
  static StepResult advance(FleetState& f, const EgoCommand& command, const RingConfig& cfg,
                            Rng& noise) {
    const std::size_t n = f.size();
    std::vector<double> accel(n, 0.0);
    std::normal_distribution<double> jitter(0.0, cfg.accel_noise_std > 0.0 ? cfg.accel_noise_std : 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double idm = idm_accel(f.speed_[i], f.speed_[f.leader(i)], f.gap(i), cfg.idm);
      if (i != f.ego_) {
        accel[i] = idm + (cfg.accel_noise_std > 0.0 ? jitter(noise) : 0.0);
        continue;
      }
      const double bound = cfg.ego_accel_bound;
      accel[i] = std::visit(
          [&](const auto& cmd) -> double {
            using T = std::decay_t<decltype(cmd)>;
            if constexpr (std::is_same_v<T, Autopilot>) {
              return idm;
            } else if constexpr (std::is_same_v<T, SpeedCommand>) {
              const double track = std::clamp((cmd.speed - f.speed_[i]) / cfg.time_step, -bound, bound);
              return std::min(track, idm);
            } else {
              return std::clamp(cmd.accel, -bound, bound);
            }
          },
          command);
    }
    for (std::size_t i = 0; i < n; ++i) {
      f.speed_[i] = std::clamp(f.speed_[i] + accel[i] * cfg.time_step, 0.0, cfg.max_speed);
      f.odometer_[i] += f.speed_[i] * cfg.time_step;
    }
    ++f.step_;
    return {!f.collision_free(), accel[f.ego_]};
  }
};

FleetState make_fleet(const RingConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.vehicle_count);
  std::vector<double> odo(n), speed(n, 0.0);
  std::uniform_real_distribution<double> spread(0.0, cfg.init_speed_spread);
  for (std::size_t i = 0; i < n; ++i) {
    odo[i] = cfg.circumference * static_cast<double>(i) / static_cast<double>(n);
    if (cfg.init_speed_spread > 0.0) speed[i] = spread(rng);
  }
  return FleetState(cfg.circumference, cfg.vehicle_length, std::move(odo), std::move(speed));
}

FleetState make_uniform_fleet(const RingConfig& cfg, double speed) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.vehicle_count);
  std::vector<double> odo(n), speeds(n, speed);
  for (std::size_t i = 0; i < n; ++i) {
    odo[i] = cfg.circumference * static_cast<double>(i) / static_cast<double>(n);
  }
  return FleetState(cfg.circumference, cfg.vehicle_length, std::move(odo), std::move(speeds));
}

StepResult step(FleetState& fleet, const EgoCommand& command, const RingConfig& cfg, Rng& noise) {
  if (!fleet.collision_free()) throw CollisionError("step called on a fleet in collision");
  return FleetStepper::advance(fleet, command, cfg, noise);
}

bool warmup(FleetState& fleet, const RingConfig& cfg, Rng& noise, EpisodeRecord* record) {
  for (int t = 0; t < cfg.warmup_steps; ++t) {
    const StepResult r = step(fleet, Autopilot{}, cfg, noise);
    if (record) append_row(*record, fleet, kNoAdvice, kNoAdvice);
    if (r.collision) return false;
  }
  return true;
}

WarmupResult warmup(const RingConfig& cfg, std::uint64_t seed, int max_attempts,
                    EpisodeRecord* record) {
  cfg.validate();
  WarmupResult out;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(attempt);
    const SeedStreams streams(s);
    Rng init = streams.stream("sim.init");
    Rng noise = streams.stream("sim.warmup");
    FleetState fleet = make_fleet(cfg, init);
    EpisodeRecord scratch;
    EpisodeRecord* sink = record ? &scratch : nullptr;
    if (warmup(fleet, cfg, noise, sink)) {
      out.fleet = std::move(fleet);
      out.seed = s;
      if (record) {
        record->vehicle_count = out.fleet.size();
        record->ego = out.fleet.ego();
        record->circumference = cfg.circumference;
        record->time_step = cfg.time_step;
        record->warmup_steps = cfg.warmup_steps;
        record->rows = std::move(scratch.rows);
      }
      return out;
    }
    ++out.rejected;
    spdlog::info("warm-up seed {} collided, retrying with {}", s, s + 1);
  }
  throw CollisionError("warm-up collided for " + std::to_string(max_attempts) + " consecutive seeds");
}

void append_row(EpisodeRecord& record, const FleetState& fleet, double advice, double driver_action) {
  if (record.rows.empty() && record.vehicle_count == 0) {
    record.vehicle_count = fleet.size();
    record.ego = fleet.ego();
    record.circumference = fleet.circumference();
  }
  EpisodeRow row;
  row.t = fleet.step();
  row.advice = advice;
  row.driver_action = driver_action;
  row.speed = fleet.speeds();
  row.headway = fleet.gaps();
  row.odometer = fleet.odometers();
  record.rows.push_back(std::move(row));
}

}  // namespace ringlab::sim
