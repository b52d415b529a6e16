#include "ringlab/drive/session.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace ringlab::drive {

namespace {

using nlohmann::json;

json parse_object(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("message is not a JSON object");
  if (!j.contains("type") || !j["type"].is_string()) throw ProtocolError("message has no string 'type'");
  return j;
}

double number_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw ProtocolError(std::string("field '") + key + "' must be a number");
  }
  const double v = j[key].get<double>();
  if (!std::isfinite(v)) throw ProtocolError(std::string("field '") + key + "' must be finite");
  return v;
}

json vehicle_json(const VehicleView& v) { return {{"pos", v.pos}, {"v", v.v}}; }

VehicleView vehicle_from(const json& j) { return {number_field(j, "pos"), number_field(j, "v")}; }

Phase parse_phase(const std::string& s) {
  for (Phase p : {Phase::Lobby, Phase::Warmup, Phase::Driving, Phase::Ended}) {
    if (to_string(p) == s) return p;
  }
  throw ProtocolError("unknown phase '" + s + "'");
}

EndReason parse_reason(const std::string& s) {
  for (EndReason r : {EndReason::Completed, EndReason::Aborted, EndReason::Collision, EndReason::Disconnected}) {
    if (to_string(r) == s) return r;
  }
  throw ProtocolError("unknown end reason '" + s + "'");
}

}  // namespace

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::Lobby: return "lobby";
    case Phase::Warmup: return "warmup";
    case Phase::Driving: return "driving";
    case Phase::Ended: return "ended";
  }
  return "?";
}

std::string_view to_string(EndReason reason) {
  switch (reason) {
    case EndReason::Completed: return "completed";
    case EndReason::Aborted: return "aborted";
    case EndReason::Collision: return "collision";
    case EndReason::Disconnected: return "disconnected";
  }
  return "?";
}

DisplayAdvice advice_for_display(double advice) {
  return {advice, std::max(0.0, advice - kDisplayBand), advice + kDisplayBand, kDisplayBand};
}

bool within_range(double ego_speed, double advice) { return std::abs(ego_speed - advice) <= kDisplayBand; }

ClientMessage parse_client_message(std::string_view text) {
  const json j = parse_object(text);
  const std::string type = j["type"];
  if (type == "start") {
    StartMessage m;
    if (!j.contains("policy") || !j["policy"].is_string()) throw ProtocolError("start needs a string 'policy'");
    try {
      m.policy = advisory::parse_policy_kind(j["policy"].get<std::string>());
    } catch (const Error& e) {
      throw ProtocolError(e.what());
    }
    if (!j.contains("delta") || !j["delta"].is_number_integer() || j["delta"].get<int>() <= 0) {
      throw ProtocolError("start needs a positive integer 'delta'");
    }
    m.delta = j["delta"].get<int>();
    if (j.contains("seed")) {
      if (!j["seed"].is_number_unsigned()) throw ProtocolError("'seed' must be a non-negative integer");
      m.seed = j["seed"].get<std::uint64_t>();
    }
    return m;
  }
  if (type == "control") {
    return ControlMessage{std::clamp(number_field(j, "accel"), -kHumanAccelBound, kHumanAccelBound)};
  }
  if (type == "abort") return AbortMessage{};
  throw ProtocolError("unknown client message type '" + type + "'");
}

std::string to_json(const ClientMessage& message) {
  return std::visit(
      [](const auto& m) -> std::string {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, StartMessage>) {
          return json{{"type", "start"},
                      {"policy", std::string(advisory::to_string(m.policy))},
                      {"delta", m.delta},
                      {"seed", m.seed}}
              .dump();
        } else if constexpr (std::is_same_v<T, ControlMessage>) {
          return json{{"type", "control"}, {"accel", m.accel}}.dump();
        } else {
          return json{{"type", "abort"}}.dump();
        }
      },
      message);
}

std::string to_json(const StateMessage& m) {
  json vehicles = json::array();
  for (const VehicleView& v : m.vehicles) vehicles.push_back(vehicle_json(v));
  json advice = {{"v", nullptr}, {"band", m.band}};
  if (m.advice) advice["v"] = *m.advice;
  return json{{"type", "state"},
              {"t", m.t},
              {"ego", vehicle_json(m.ego)},
              {"ego_index", m.ego_index},
              {"advice", advice},
              {"vehicles", vehicles},
              {"phase", std::string(to_string(m.phase))}}
      .dump();
}

std::string to_json(const EndMessage& m) {
  return json{{"type", "end"},
              {"metrics", {{"mu", m.mu}, {"sigma", m.sigma}, {"cf", m.cf}}},
              {"collision", m.collision},
              {"partial", m.partial},
              {"reason", std::string(to_string(m.reason))},
              {"steps", m.steps}}
      .dump();
}

std::string message_type(std::string_view text) { return parse_object(text)["type"]; }

StateMessage parse_state_message(std::string_view text) {
  const json j = parse_object(text);
  if (j["type"] != "state") throw ProtocolError("not a state message");
  try {
    StateMessage m;
    m.t = number_field(j, "t");
    m.ego = vehicle_from(j.at("ego"));
    m.ego_index = j.at("ego_index").get<std::size_t>();
    const json& advice = j.at("advice");
    if (!advice.at("v").is_null()) m.advice = number_field(advice, "v");
    m.band = number_field(advice, "band");
    for (const json& v : j.at("vehicles")) m.vehicles.push_back(vehicle_from(v));
    m.phase = parse_phase(j.at("phase").get<std::string>());
    return m;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed state message: ") + e.what());
  }
}

EndMessage parse_end_message(std::string_view text) {
  const json j = parse_object(text);
  if (j["type"] != "end") throw ProtocolError("not an end message");
  try {
    EndMessage m;
    const json& metrics = j.at("metrics");
    m.mu = number_field(metrics, "mu");
    m.sigma = number_field(metrics, "sigma");
    m.cf = number_field(metrics, "cf");
    m.collision = j.at("collision").get<bool>();
    m.partial = j.at("partial").get<bool>();
    m.reason = parse_reason(j.at("reason").get<std::string>());
    m.steps = j.at("steps").get<std::size_t>();
    return m;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed end message: ") + e.what());
  }
}

PolicyResolver osl_only() {
  return [](advisory::PolicyKind kind, int delta) {
    if (kind != advisory::PolicyKind::Osl) {
      throw ConfigError("policy '" + std::string(advisory::to_string(kind)) + "' is not loaded on this server");
    }
    trainer::RolloutSpec spec;
    spec.kind = kind;
    spec.hold_steps = delta;
    return spec;
  };
}

DriveSession::DriveSession(SessionConfig cfg, PolicyResolver resolver)
    : cfg_(std::move(cfg)), resolver_(std::move(resolver)) {
  cfg_.ring.validate();
  if (!(cfg_.trial_seconds > 0.0)) throw ConfigError("trial length must be positive");
  trial_ticks_ = static_cast<std::size_t>(std::llround(cfg_.trial_seconds / cfg_.ring.time_step));
}

StateMessage DriveSession::start(const StartMessage& request) {
  if (phase_ != Phase::Lobby) throw ContractError("session already started");
  request_ = request;
  spec_ = resolver_(request.policy, request.delta);
  phase_ = Phase::Warmup;

  const SeedStreams streams(request.seed);
  sim::WarmupResult warm = sim::warmup(cfg_.ring, streams.derive("sim"), 16, &record_);
  fleet_ = std::move(warm.fleet);
  noise_ = streams.stream("sim.noise");
  policy_rng_ = streams.stream("policy");
  if (spec_.latent) latent_ = spec_.latent(driver::DriverTraits{});
  controller_ = std::make_unique<advisory::AdvisoryController>(spec_.kind, spec_.hold_steps, cfg_.ring, spec_.base,
                                                               spec_.residual, latent_.get(),
                                                               advisory::ActMode::Greedy);
  record_.metadata["policy"] = std::string(advisory::to_string(spec_.kind));
  record_.metadata["hold_steps"] = std::to_string(spec_.hold_steps);
  record_.metadata["seed"] = std::to_string(request.seed);
  record_.metadata["warmup_seed"] = std::to_string(warm.seed);
  record_.metadata["driver"] = "human";
  record_.metadata["driver_action_unit"] = "m/s^2";

  StateMessage out = snapshot(Phase::Warmup);
  phase_ = Phase::Driving;
  return out;
}

StateMessage DriveSession::tick(double accel) {
  if (phase_ != Phase::Driving) throw ContractError("tick outside the driving phase");
  if (!std::isfinite(accel)) throw ContractError("human acceleration must be finite");
  const double a = std::clamp(accel, -kHumanAccelBound, kHumanAccelBound);
  controller_->observe(fleet_);
  advice_ = controller_->advise(fleet_, policy_rng_);
  const sim::StepResult r = sim::step(fleet_, sim::AccelCommand{a}, cfg_.ring, noise_);
  controls_.push_back(a);
  sim::append_row(record_, fleet_, advice_, a);
  StateMessage out = snapshot(Phase::Driving);
  if (r.collision) {
    finish(EndReason::Collision);
  } else if (controls_.size() >= trial_ticks_) {
    finish(EndReason::Completed);
  }
  return out;
}

EndMessage DriveSession::abort() {
  if (phase_ == Phase::Ended) return *end_;
  return finish(EndReason::Aborted);
}

EndMessage DriveSession::disconnect() {
  if (phase_ == Phase::Ended) return *end_;
  return finish(EndReason::Disconnected);
}

StateMessage DriveSession::snapshot(Phase phase) const {
  StateMessage m;
  m.t = static_cast<double>(controls_.size()) * cfg_.ring.time_step;
  m.phase = phase;
  m.ego_index = fleet_.ego();
  m.ego = {fleet_.position(fleet_.ego()), fleet_.speed(fleet_.ego())};
  if (sim::has_advice(advice_)) m.advice = advice_;
  m.vehicles.reserve(fleet_.size());
  for (std::size_t i = 0; i < fleet_.size(); ++i) m.vehicles.push_back({fleet_.position(i), fleet_.speed(i)});
  return m;
}

EndMessage DriveSession::finish(EndReason reason) {
  EndMessage m;
  m.reason = reason;
  m.collision = reason == EndReason::Collision;
  m.partial = reason == EndReason::Aborted || reason == EndReason::Disconnected;
  m.steps = controls_.size();
  if (!controls_.empty()) {
    const metrics::EpisodeMetrics em = metrics::compute_metrics(record_);
    m.mu = em.mu;
    m.sigma = em.sigma;
    m.cf = em.cf;
  }
  record_.metadata["collision"] = m.collision ? "1" : "0";
  record_.metadata["end"] = std::string(to_string(reason));
  phase_ = Phase::Ended;
  end_ = m;
  return m;
}

SessionResult DriveSession::result() const {
  if (!end_) throw ContractError("session has not ended");
  return {request_, *end_, record_, controls_};
}

SessionResult replay(const SessionConfig& cfg, const PolicyResolver& resolver, const StartMessage& start,
                     std::span<const double> controls, EndReason reason) {
  DriveSession session(cfg, resolver);
  session.start(start);
  for (double a : controls) {
    if (session.phase() != Phase::Driving) throw ContractError("control trace runs past the end of the trial");
    session.tick(a);
  }
  if (session.phase() == Phase::Driving) {
    if (reason == EndReason::Aborted) {
      session.abort();
    } else if (reason == EndReason::Disconnected) {
      session.disconnect();
    } else {
      throw ContractError("control trace ends before the trial does");
    }
  }
  return session.result();
}

}  // namespace ringlab::drive
