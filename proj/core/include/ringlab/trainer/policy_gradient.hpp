#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "ringlab/nn/layers.hpp"
#include "ringlab/nn/optimizer.hpp"
#include "ringlab/trainer/rollout.hpp"

namespace ringlab::trainer {

struct TrainConfig {
  enum class Estimator { Vanilla, Clipped };

  double gamma = 0.99;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  int iterations = 1000;
  int rollouts_per_update = 8;
  std::uint64_t seed = 0;
  bool normalize_advantages = true;
  Estimator estimator = Estimator::Vanilla;
  double clip_epsilon = 0.2;
  int update_epochs = 1;
  double max_grad_norm = 0.0;  // 0 disables clipping
  bool early_stop = true;
  int convergence_window = 50;
  double convergence_tolerance = 0.01;
  int workers = 1;  // rollout threads

  void validate() const;
};

struct Sample {
  std::span<const double> input;
  std::size_t action = 0;
  double advantage = 0.0;
  double old_log_prob = 0.0;
};

// Advantage = return - mean return at the same decision index across the
// batch, optionally standardised. Output is flattened in batch order.
std::vector<double> decision_advantages(std::span<const RolloutBatch> batches, bool normalize);

// -(1/n) sum A log pi(a|s) for the vanilla estimator; the clipped surrogate
// otherwise.
nn::Var policy_loss(nn::Graph& g, nn::PerceptronNet& net, std::span<const Sample> samples,
                    TrainConfig::Estimator estimator, double clip_epsilon);

std::vector<double> log_probs(const nn::PerceptronNet& net, std::span<const Sample> samples);

// One optimizer step. Returns false (and leaves parameters untouched) when
// the loss or its gradient is not finite.
bool policy_gradient_step(nn::PerceptronNet& net, std::span<const Sample> samples, nn::AdamOptimizer& opt,
                          const TrainConfig& cfg);

struct CurvePoint {
  int iteration = 0;
  double mean_return = 0.0;
  double mean_cf = 0.0;
  double collision_rate = 0.0;
  bool skipped = false;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  bool converged = false;
  int skipped = 0;
};

using ProgressFn = std::function<void(const CurvePoint&)>;

// Trains the policy that acts in `spec` (spec.base for PCP, spec.residual for
// residual kinds). Aborts with NumericError after three consecutive
// non-finite iterations.
TrainResult train(advisory::PolicyModel& policy, RolloutSpec spec, const sim::RingConfig& ring,
                  const TrainConfig& cfg, const ProgressFn& progress = {});

void write_learning_curve(std::span<const CurvePoint> curve, std::ostream& out);

}  // namespace ringlab::trainer
