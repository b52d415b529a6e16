#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "ringlab/random.hpp"
#include "ringlab/sim/episode_record.hpp"

namespace ringlab::sim {

struct IdmParams {
  double desired_speed = 30.0;   // v0, m/s
  double time_headway = 1.0;     // T, s
  double max_accel = 1.0;        // a_max, m/s^2
  double comfort_decel = 1.5;    // b, m/s^2
  double exponent = 4.0;         // delta
  double min_gap = 2.0;          // s0, m
};

struct RingConfig {
  double circumference = 628.0;  // m
  int vehicle_count = 40;
  double vehicle_length = 5.0;   // m
  double time_step = 0.1;        // s
  double max_speed = 35.0;       // m/s
  IdmParams idm;
  double accel_noise_std = 0.2;  // m/s^2, background vehicles only
  int warmup_steps = 900;
  int horizon = 3000;
  double ego_accel_bound = 3.0;  // m/s^2
  // Fresh fleets start uniformly spaced with speeds drawn from U(0, spread).
  double init_speed_spread = 9.0;

  // Throws ConfigError on a violated invariant.
  void validate() const;
};

// Intelligent Driver Model acceleration. Throws CollisionError when gap <= 0.
double idm_accel(double speed, double leader_speed, double gap, const IdmParams& params);

// Speed at which a uniformly spaced, noise-free IDM ring is a fixed point.
// Throws ConfigError when the spacing leaves no room above the jam gap.
double equilibrium_speed(const RingConfig& cfg);

struct VehicleState {
  double position = 0.0;  // m, in [0, L)
  double speed = 0.0;     // m/s
};

// Vehicles are stored in ring order: the leader of vehicle i is i + 1 (mod N).
// Distances are kept unwrapped (odometer) so ordering and gaps are exact.
class FleetState {
 public:
  FleetState() = default;
  FleetState(double circumference, double vehicle_length, std::vector<double> odometer,
             std::vector<double> speed, std::size_t ego = 0);

  std::size_t size() const { return speed_.size(); }
  std::size_t ego() const { return ego_; }
  std::int64_t step() const { return step_; }
  double circumference() const { return circumference_; }
  double vehicle_length() const { return vehicle_length_; }

  std::size_t leader(std::size_t i) const { return (i + 1) % size(); }
  double position(std::size_t i) const;
  double odometer(std::size_t i) const { return odometer_[i]; }
  double speed(std::size_t i) const { return speed_[i]; }
  // Bumper-to-bumper distance to the leader.
  double gap(std::size_t i) const;
  VehicleState vehicle(std::size_t i) const { return {position(i), speed_[i]}; }

  std::vector<double> speeds() const { return speed_; }
  std::vector<double> gaps() const;
  std::vector<double> odometers() const { return odometer_; }

  bool collision_free() const;

 private:
  friend struct FleetStepper;

  double circumference_ = 0.0;
  double vehicle_length_ = 0.0;
  std::vector<double> odometer_;
  std::vector<double> speed_;
  std::size_t ego_ = 0;
  std::int64_t step_ = 0;
};

// Ego commands.
struct Autopilot {};
struct SpeedCommand {
  double speed;  // target speed, m/s
};
struct AccelCommand {
  double accel;  // m/s^2, clamped to the ego bound
};
using EgoCommand = std::variant<Autopilot, SpeedCommand, AccelCommand>;

struct StepResult {
  bool collision = false;
  double ego_accel = 0.0;
};

// Uniformly spaced fleet; speeds drawn from U(0, cfg.init_speed_spread).
FleetState make_fleet(const RingConfig& cfg, Rng& rng);
// Uniformly spaced fleet with every vehicle at `speed`.
FleetState make_uniform_fleet(const RingConfig& cfg, double speed);

// One fixed step. Background vehicles follow IDM plus Gaussian noise; the ego
// follows the command. Speeds update first and positions integrate with the
// new speed. Returns collision = true if any gap is <= 0 afterwards.
StepResult step(FleetState& fleet, const EgoCommand& command, const RingConfig& cfg, Rng& noise);

struct WarmupResult {
  FleetState fleet;
  std::uint64_t seed = 0;  // seed that produced a collision-free warm-up
  int rejected = 0;        // seeds skipped because of a collision
};

// Runs cfg.warmup_steps all-IDM steps (noise on, ego on autopilot) from a
// fresh fleet. A collision rejects the seed and retries with seed + 1.
WarmupResult warmup(const RingConfig& cfg, std::uint64_t seed, int max_attempts = 16,
                    EpisodeRecord* record = nullptr);

// Continues an existing fleet for cfg.warmup_steps all-IDM steps.
bool warmup(FleetState& fleet, const RingConfig& cfg, Rng& noise, EpisodeRecord* record = nullptr);

// Row for the record describing `fleet` after a step.
void append_row(EpisodeRecord& record, const FleetState& fleet, double advice, double driver_action);

}  // namespace ringlab::sim
