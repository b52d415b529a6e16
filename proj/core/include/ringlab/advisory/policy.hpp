#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ringlab/driver/driver.hpp"
#include "ringlab/nn/layers.hpp"
#include "ringlab/random.hpp"
#include "ringlab/sim/ring.hpp"

namespace ringlab::advisory {

// Bumped whenever the order or scaling of policy inputs changes.
inline constexpr int kInputLayoutVersion = 1;

struct Observation {
  double ego_speed = 0.0;     // v_ego / v_max
  double leader_speed = 0.0;  // v_leader / v_max
  double leader_gap = 0.0;    // h_leader / h_max

  std::array<double, 3> values() const { return {ego_speed, leader_speed, leader_gap}; }
};

Observation make_observation(double ego_speed, double leader_speed, double leader_gap, double max_speed,
                             double max_gap);
// h_max is the ring circumference.
Observation build_observation(const sim::FleetState& fleet, const sim::RingConfig& cfg);

struct ActionGrid {
  std::vector<double> base;      // 0, 1, ..., a_max
  std::vector<double> residual;  // -n*eps, ..., 0, ..., n*eps
  double a_max = 35.0;

  static ActionGrid make(double a_max = 35.0, double spacing = 1.0, int residual_count = 10,
                         double residual_step = 1.0);
};

enum class PolicyKind { Osl, Pcp, Rp, Perp, Tarp };

std::string_view to_string(PolicyKind kind);
PolicyKind parse_policy_kind(std::string_view text);
bool is_residual(PolicyKind kind);

enum class ActMode { Sample, Greedy };

struct Decision {
  std::size_t index = 0;
  double value = 0.0;
  std::vector<double> input;
};

// A learned advisory policy: a categorical policy over the base grid (PCP) or
// the residual grid (RP, PeRP, TA-RP).
class PolicyModel {
 public:
  PolicyModel() = default;
  // latent_dim is |L| for PeRP and the trait encoding width for TA-RP.
  PolicyModel(PolicyKind kind, int hold_steps, ActionGrid grid, std::size_t latent_dim = 0,
              std::vector<std::size_t> hidden = {64, 64});

  PolicyKind kind() const { return kind_; }
  int hold_steps() const { return hold_steps_; }
  const ActionGrid& grid() const { return grid_; }
  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t input_width() const { return net_.in_features(); }
  std::size_t output_width() const { return net_.out_features(); }
  const std::vector<std::size_t>& hidden() const { return hidden_; }

  // Inputs in fixed order: obs (3), then base/A_max, then latent.
  std::vector<double> assemble_input(const Observation& obs, std::optional<double> base_action,
                                     std::span<const double> latent) const;
  std::vector<double> logits(std::span<const double> input) const;

  void initialize(Rng& rng) { net_.initialize(rng); }
  nn::PerceptronNet& net() { return net_; }
  const nn::PerceptronNet& net() const { return net_; }
  std::vector<nn::Parameter*> parameters() { return net_.parameters(); }

 private:
  PolicyKind kind_ = PolicyKind::Pcp;
  int hold_steps_ = 50;
  ActionGrid grid_;
  std::size_t latent_dim_ = 0;
  std::vector<std::size_t> hidden_;
  nn::PerceptronNet net_;
};

std::size_t input_width(PolicyKind kind, std::size_t latent_dim);

// Categorical draw (or argmax) over softmax(logits).
std::size_t choose(std::span<const double> logits, ActMode mode, Rng& rng);

Decision pcp_act(const PolicyModel& policy, const Observation& obs, ActMode mode, Rng& rng);
Decision residual_act(const PolicyModel& policy, const Observation& obs, double base_action,
                      std::span<const double> latent, ActMode mode, Rng& rng);

double compose_advice(double base, double offset, const ActionGrid& grid);
double osl_act(const sim::RingConfig& cfg);

// True when a new advice is due at step t (counted from advice start).
bool hold_tick(std::int64_t t, int hold_steps);

class HoldScheduler {
 public:
  explicit HoldScheduler(int hold_steps);

  bool due() const { return hold_tick(t_, hold_); }
  void hold(double advice);
  // Advice active at the current step; advances the clock.
  double tick();
  double current() const { return held_; }
  std::int64_t step() const { return t_; }
  int hold_steps() const { return hold_; }

 private:
  int hold_;
  std::int64_t t_ = 0;
  double held_ = sim::kNoAdvice;
};

// TA-RP trait encoding (sigma / 6, m / 7.5).
std::vector<double> encode_traits(const driver::DriverTraits& traits);
inline constexpr std::size_t kTraitEncodingWidth = 2;

// Supplies the conditioning vector for PeRP / TA-RP from the recent ego
// observation history (oldest first).
class LatentSource {
 public:
  virtual ~LatentSource() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t history_length() const = 0;
  virtual std::vector<double> latent(const std::deque<Observation>& history, Rng& rng) = 0;
};

class TraitLatent final : public LatentSource {
 public:
  explicit TraitLatent(driver::DriverTraits traits) : traits_(traits) {}
  std::size_t dim() const override { return kTraitEncodingWidth; }
  std::size_t history_length() const override { return 0; }
  std::vector<double> latent(const std::deque<Observation>&, Rng&) override { return encode_traits(traits_); }

 private:
  driver::DriverTraits traits_;
};

struct DecisionStep {
  std::int64_t t = 0;    // advising step
  double advice = 0.0;   // composed advice, m/s
  double base = 0.0;     // base speed before the residual, m/s
  Decision decision;     // choice made by the trainable policy
};

// Produces the held advice stream for one episode. For residual kinds the base
// PCP runs greedily and the residual policy acts in `mode`; for PCP the base
// policy itself acts in `mode`; OSL advises the equilibrium speed.
class AdvisoryController {
 public:
  AdvisoryController(PolicyKind kind, int hold_steps, const sim::RingConfig& cfg,
                     const PolicyModel* base, const PolicyModel* residual,
                     LatentSource* latent = nullptr, ActMode mode = ActMode::Greedy);

  // Records the ego observation of a step (call once per simulated step,
  // including warm-up, before advise()).
  void observe(const sim::FleetState& fleet);
  // Advice for the current step; a new decision is taken at hold boundaries.
  double advise(const sim::FleetState& fleet, Rng& rng);

  const std::vector<DecisionStep>& decisions() const { return decisions_; }
  const HoldScheduler& scheduler() const { return scheduler_; }
  PolicyKind kind() const { return kind_; }

 private:
  PolicyKind kind_;
  sim::RingConfig cfg_;
  const PolicyModel* base_;
  const PolicyModel* residual_;
  LatentSource* latent_;
  ActMode mode_;
  HoldScheduler scheduler_;
  std::deque<Observation> history_;
  std::vector<DecisionStep> decisions_;
  double osl_speed_ = 0.0;
};

}  // namespace ringlab::advisory
