#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ringlab/advisory/policy.hpp"
#include "ringlab/error.hpp"
#include "ringlab/metrics/metrics.hpp"
#include "ringlab/sim/ring.hpp"
#include "ringlab/trainer/rollout.hpp"

namespace ringlab::drive {

class ProtocolError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kHumanAccelBound = 3.0;  // m/s^2
inline constexpr double kDisplayBand = 1.0;      // m/s

enum class Phase { Lobby, Warmup, Driving, Ended };

std::string_view to_string(Phase phase);

struct DisplayAdvice {
  double line = 0.0;
  double low = 0.0;
  double high = 0.0;
  double band = kDisplayBand;
};

// Red line at the advice, green band of half-width 1 m/s clamped below at 0.
DisplayAdvice advice_for_display(double advice);
bool within_range(double ego_speed, double advice);

// Client -> server.
struct StartMessage {
  advisory::PolicyKind policy = advisory::PolicyKind::Osl;
  int delta = 50;
  std::uint64_t seed = 0;
};
struct ControlMessage {
  double accel = 0.0;  // clamped to +-kHumanAccelBound on parse
};
struct AbortMessage {};
using ClientMessage = std::variant<StartMessage, ControlMessage, AbortMessage>;

// Throws ProtocolError on malformed JSON, an unknown type or a bad field.
ClientMessage parse_client_message(std::string_view text);
std::string to_json(const ClientMessage& message);

// Server -> client.
struct VehicleView {
  double pos = 0.0;
  double v = 0.0;
};
struct StateMessage {
  double t = 0.0;  // s of trial clock
  VehicleView ego;
  std::size_t ego_index = 0;
  std::optional<double> advice;  // null until the first decision
  double band = kDisplayBand;
  std::vector<VehicleView> vehicles;
  Phase phase = Phase::Lobby;
};

enum class EndReason { Completed, Aborted, Collision, Disconnected };
std::string_view to_string(EndReason reason);

struct EndMessage {
  double mu = 0.0;
  double sigma = 0.0;
  double cf = 0.0;
  bool collision = false;
  bool partial = false;
  EndReason reason = EndReason::Completed;
  std::size_t steps = 0;
};

std::string to_json(const StateMessage& message);
std::string to_json(const EndMessage& message);
StateMessage parse_state_message(std::string_view text);
EndMessage parse_end_message(std::string_view text);
// "state", "end", "start", "control" or "abort"; throws ProtocolError.
std::string message_type(std::string_view text);

// Supplies the frozen networks for a requested policy and hold length.
// Throws ConfigError when no such policy is available.
using PolicyResolver = std::function<trainer::RolloutSpec(advisory::PolicyKind, int delta)>;

// Resolver that only offers the open-loop equilibrium advice.
PolicyResolver osl_only();

struct SessionConfig {
  sim::RingConfig ring;
  double trial_seconds = 300.0;
};

struct SessionResult {
  StartMessage start;
  EndMessage end;
  sim::EpisodeRecord record;
  std::vector<double> controls;  // accel applied on each driving tick
};

// One trial, independent of any transport. The owner calls tick() once per
// 0.1 s of wall clock with the latest human command.
class DriveSession {
 public:
  DriveSession(SessionConfig cfg, PolicyResolver resolver);

  Phase phase() const { return phase_; }
  // Lobby -> warm-up -> driving. Warm-up runs to completion immediately.
  // Returns the state after warm-up (phase warmup, t = 0).
  StateMessage start(const StartMessage& request);
  // One driving step. Ends the trial on timeout or collision.
  StateMessage tick(double accel);
  EndMessage abort();
  EndMessage disconnect();

  // Set once the phase is Ended.
  const std::optional<EndMessage>& end() const { return end_; }
  SessionResult result() const;
  std::size_t ticks() const { return controls_.size(); }
  std::size_t trial_ticks() const { return trial_ticks_; }

 private:
  StateMessage snapshot(Phase phase) const;
  EndMessage finish(EndReason reason);

  SessionConfig cfg_;
  PolicyResolver resolver_;
  Phase phase_ = Phase::Lobby;
  StartMessage request_;
  trainer::RolloutSpec spec_;
  std::unique_ptr<advisory::LatentSource> latent_;
  std::unique_ptr<advisory::AdvisoryController> controller_;
  sim::FleetState fleet_;
  Rng noise_{0};
  Rng policy_rng_{0};
  sim::EpisodeRecord record_;
  std::vector<double> controls_;
  double advice_ = sim::kNoAdvice;
  std::size_t trial_ticks_ = 0;
  std::optional<EndMessage> end_;
};

// Runs a session offline with a logged control trace. An end reason other
// than Completed or Collision is reproduced after the last control.
SessionResult replay(const SessionConfig& cfg, const PolicyResolver& resolver, const StartMessage& start,
                     std::span<const double> controls, EndReason reason = EndReason::Completed);

}  // namespace ringlab::drive
