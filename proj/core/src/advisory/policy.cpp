#include "ringlab/advisory/policy.hpp"

#include <algorithm>
#include <cmath>

#include "ringlab/error.hpp"

namespace ringlab::advisory {

Observation make_observation(double ego_speed, double leader_speed, double leader_gap, double max_speed,
                             double max_gap) {
  return {ego_speed / max_speed, leader_speed / max_speed, leader_gap / max_gap};
}

Observation build_observation(const sim::FleetState& fleet, const sim::RingConfig& cfg) {
  const std::size_t ego = fleet.ego();
  return make_observation(fleet.speed(ego), fleet.speed(fleet.leader(ego)), fleet.gap(ego), cfg.max_speed,
                          cfg.circumference);
}

ActionGrid ActionGrid::make(double a_max, double spacing, int residual_count, double residual_step) {
  if (!(a_max > 0.0) || !(spacing > 0.0) || residual_count < 0 || !(residual_step > 0.0)) {
    throw ConfigError("invalid action grid parameters");
  }
  ActionGrid g;
  g.a_max = a_max;
  const auto count = static_cast<std::size_t>(std::floor(a_max / spacing + 1e-9)) + 1;
  for (std::size_t i = 0; i < count; ++i) g.base.push_back(static_cast<double>(i) * spacing);
  for (int i = -residual_count; i <= residual_count; ++i) g.residual.push_back(i * residual_step);
  return g;
}

std::string_view to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Osl: return "osl";
    case PolicyKind::Pcp: return "pcp";
    case PolicyKind::Rp: return "rp";
    case PolicyKind::Perp: return "perp";
    case PolicyKind::Tarp: return "tarp";
  }
  return "?";
}

PolicyKind parse_policy_kind(std::string_view text) {
  for (PolicyKind k : {PolicyKind::Osl, PolicyKind::Pcp, PolicyKind::Rp, PolicyKind::Perp, PolicyKind::Tarp}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown policy kind '" + std::string(text) + "'");
}

bool is_residual(PolicyKind kind) {
  return kind == PolicyKind::Rp || kind == PolicyKind::Perp || kind == PolicyKind::Tarp;
}

std::size_t input_width(PolicyKind kind, std::size_t latent_dim) {
  switch (kind) {
    case PolicyKind::Pcp: return 3;
    case PolicyKind::Rp: return 4;
    case PolicyKind::Perp:
    case PolicyKind::Tarp: return 4 + latent_dim;
    case PolicyKind::Osl: break;
  }
  throw ContractError("OSL has no network");
}

PolicyModel::PolicyModel(PolicyKind kind, int hold_steps, ActionGrid grid, std::size_t latent_dim,
                         std::vector<std::size_t> hidden)
    : kind_(kind), hold_steps_(hold_steps), grid_(std::move(grid)), latent_dim_(latent_dim), hidden_(hidden) {
  if (hold_steps < 1) throw ConfigError("hold length must be >= 1 step");
  if (kind == PolicyKind::Rp && latent_dim != 0) throw ContractError("RP takes no latent input");
  if ((kind == PolicyKind::Perp || kind == PolicyKind::Tarp) && latent_dim == 0) {
    throw ContractError(std::string(to_string(kind)) + " needs a latent input");
  }
  const std::size_t out = is_residual(kind) ? grid_.residual.size() : grid_.base.size();
  net_ = nn::PerceptronNet(std::string(to_string(kind)), advisory::input_width(kind, latent_dim), std::move(hidden), out);
}

std::vector<double> PolicyModel::assemble_input(const Observation& obs, std::optional<double> base_action,
                                                std::span<const double> latent) const {
  std::vector<double> in;
  in.reserve(input_width());
  const auto o = obs.values();
  in.insert(in.end(), o.begin(), o.end());
  if (kind_ == PolicyKind::Pcp) {
    if (base_action || !latent.empty()) throw ContractError("PCP input is the observation only");
    return in;
  }
  if (!base_action) throw ContractError("residual policies need the base action");
  in.push_back(*base_action / grid_.a_max);
  if (kind_ == PolicyKind::Rp && !latent.empty()) throw ContractError("latent supplied to RP");
  if (latent.size() != latent_dim_) {
    throw ContractError(std::string(to_string(kind_)) + " expects a latent of width " +
                        std::to_string(latent_dim_) + ", got " + std::to_string(latent.size()));
  }
  in.insert(in.end(), latent.begin(), latent.end());
  return in;
}

std::vector<double> PolicyModel::logits(std::span<const double> input) const { return net_.evaluate(input); }

std::size_t choose(std::span<const double> logits, ActMode mode, Rng& rng) {
  if (logits.empty()) throw DimensionError("empty logits");
  if (mode == ActMode::Greedy) {
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const std::vector<double> p = nn::softmax(logits);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

Decision pcp_act(const PolicyModel& policy, const Observation& obs, ActMode mode, Rng& rng) {
  if (policy.kind() != PolicyKind::Pcp) throw ContractError("pcp_act on a non-PCP policy");
  Decision d;
  d.input = policy.assemble_input(obs, std::nullopt, {});
  d.index = choose(policy.logits(d.input), mode, rng);
  d.value = policy.grid().base[d.index];
  return d;
}

Decision residual_act(const PolicyModel& policy, const Observation& obs, double base_action,
                      std::span<const double> latent, ActMode mode, Rng& rng) {
  if (!is_residual(policy.kind())) throw ContractError("residual_act on a non-residual policy");
  Decision d;
  d.input = policy.assemble_input(obs, base_action, latent);
  d.index = choose(policy.logits(d.input), mode, rng);
  d.value = policy.grid().residual[d.index];
  return d;
}

double compose_advice(double base, double offset, const ActionGrid& grid) {
  return std::clamp(base + offset, 0.0, grid.a_max);
}

double osl_act(const sim::RingConfig& cfg) { return sim::equilibrium_speed(cfg); }

bool hold_tick(std::int64_t t, int hold_steps) { return t % hold_steps == 0; }

HoldScheduler::HoldScheduler(int hold_steps) : hold_(hold_steps) {
  if (hold_steps < 1) throw ConfigError("hold length must be >= 1 step");
}

void HoldScheduler::hold(double advice) {
  if (!due()) throw ContractError("advice changed inside a hold period");
  held_ = advice;
}

double HoldScheduler::tick() {
  ++t_;
  return held_;
}

std::vector<double> encode_traits(const driver::DriverTraits& traits) {
  return {traits.reaction_delay / 6.0, traits.intentional_offset / 7.5};
}

AdvisoryController::AdvisoryController(PolicyKind kind, int hold_steps, const sim::RingConfig& cfg,
                                       const PolicyModel* base, const PolicyModel* residual,
                                       LatentSource* latent, ActMode mode)
    : kind_(kind),
      cfg_(cfg),
      base_(base),
      residual_(residual),
      latent_(latent),
      mode_(mode),
      scheduler_(hold_steps) {
  if (kind == PolicyKind::Osl) {
    osl_speed_ = osl_act(cfg);
    return;
  }
  if (!base_ || base_->kind() != PolicyKind::Pcp) throw ContractError("a PCP base policy is required");
  if (kind == PolicyKind::Pcp) return;
  if (!residual_ || residual_->kind() != kind) {
    throw ContractError("residual policy of kind " + std::string(to_string(kind)) + " is required");
  }
  if (kind != PolicyKind::Rp && (!latent_ || latent_->dim() != residual_->latent_dim())) {
    throw ContractError("latent source width does not match the residual policy");
  }
}

void AdvisoryController::observe(const sim::FleetState& fleet) {
  history_.push_back(build_observation(fleet, cfg_));
  const std::size_t keep = std::max<std::size_t>(1, latent_ ? latent_->history_length() : 1);
  while (history_.size() > keep) history_.pop_front();
}

double AdvisoryController::advise(const sim::FleetState& fleet, Rng& rng) {
  if (scheduler_.due()) {
    DecisionStep step;
    step.t = scheduler_.step();
    const Observation obs = build_observation(fleet, cfg_);
    if (kind_ == PolicyKind::Osl) {
      step.base = step.advice = osl_speed_;
    } else if (kind_ == PolicyKind::Pcp) {
      step.decision = pcp_act(*base_, obs, mode_, rng);
      step.base = step.advice = step.decision.value;
    } else {
      step.base = pcp_act(*base_, obs, ActMode::Greedy, rng).value;
      std::vector<double> z;
      if (kind_ != PolicyKind::Rp) z = latent_->latent(history_, rng);
      step.decision = residual_act(*residual_, obs, step.base, z, mode_, rng);
      step.advice = compose_advice(step.base, step.decision.value, residual_->grid());
    }
    scheduler_.hold(step.advice);
    decisions_.push_back(std::move(step));
  }
  return scheduler_.tick();
}

}  // namespace ringlab::advisory
