#include "ringlab/trainer/policy_gradient.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <thread>

#include <spdlog/spdlog.h>

#include "ringlab/error.hpp"

namespace ringlab::trainer {

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (iterations < 1 || rollouts_per_update < 1 || update_epochs < 1 || convergence_window < 1) {
    throw ConfigError("training counts must be > 0");
  }
  if (!(clip_epsilon > 0.0)) throw ConfigError("clip epsilon must be > 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

std::vector<double> decision_advantages(std::span<const RolloutBatch> batches, bool normalize) {
  std::map<std::size_t, std::pair<double, std::size_t>> by_index;
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.transitions.size(); ++i) {
      auto& [sum, n] = by_index[i];
      sum += b.transitions[i].ret;
      ++n;
    }
  }
  std::vector<double> adv;
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.transitions.size(); ++i) {
      const auto& [sum, n] = by_index[i];
      adv.push_back(b.transitions[i].ret - sum / static_cast<double>(n));
    }
  }
  if (normalize && adv.size() > 1) {
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(adv.size());
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(adv.size()));
    if (sd > 1e-8) {
      for (double& a : adv) a = (a - mean) / sd;
    }
  }
  return adv;
}

namespace {

nn::Tensor stack_inputs(std::span<const Sample> samples, std::size_t width) {
  nn::Tensor x = nn::Tensor::matrix(samples.size(), width);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r].input.size() != width) throw DimensionError("sample input width mismatch");
    std::copy(samples[r].input.begin(), samples[r].input.end(), x.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return x;
}

}  // namespace

nn::Var policy_loss(nn::Graph& g, nn::PerceptronNet& net, std::span<const Sample> samples,
                    TrainConfig::Estimator estimator, double clip_epsilon) {
  if (samples.empty()) throw ContractError("policy loss over zero samples");
  const std::size_t n = samples.size();
  std::vector<std::size_t> actions(n);
  nn::Tensor adv = nn::Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    actions[i] = samples[i].action;
    adv[i] = samples[i].advantage;
  }
  nn::Var logp = nn::pick(nn::log_softmax(net.forward(g, g.constant(stack_inputs(samples, net.in_features())))), actions);
  const double inv_n = 1.0 / static_cast<double>(n);
  if (estimator == TrainConfig::Estimator::Vanilla) {
    return nn::scale(nn::sum(nn::mul(logp, g.constant(adv))), -inv_n);
  }
  nn::Tensor old = nn::Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) old[i] = samples[i].old_log_prob;
  nn::Var ratio = nn::exp(nn::sub(logp, g.constant(old)));
  nn::Tensor weight = nn::Tensor::matrix(n, 1);
  double frozen = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ratio.value()[i];
    const double a = adv[i];
    const bool unclipped = (a >= 0.0 && r < 1.0 + clip_epsilon) || (a < 0.0 && r > 1.0 - clip_epsilon);
    if (unclipped) {
      weight[i] = a;
    } else {
      frozen += std::clamp(r, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * a;
    }
  }
  return nn::scale(nn::add_scalar(nn::sum(nn::mul(ratio, g.constant(weight))), frozen), -inv_n);
}

std::vector<double> log_probs(const nn::PerceptronNet& net, std::span<const Sample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto logits = net.evaluate(s.input);
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    out.push_back(logits.at(s.action) - m - std::log(z));
  }
  return out;
}

bool policy_gradient_step(nn::PerceptronNet& net, std::span<const Sample> samples, nn::AdamOptimizer& opt,
                          const TrainConfig& cfg) {
  nn::Graph g;
  nn::Var loss = policy_loss(g, net, samples, cfg.estimator, cfg.clip_epsilon);
  if (!std::isfinite(loss.value().item())) return false;
  nn::GradientMap grads = g.backward(loss);
  if (!std::isfinite(nn::squared_norm(grads))) return false;
  if (cfg.max_grad_norm > 0.0) nn::clip_global_norm(grads, cfg.max_grad_norm);
  auto params = net.parameters();
  opt.apply(params, grads);
  return true;
}

namespace {

std::vector<Episode> collect(const RolloutSpec& spec, const sim::RingConfig& ring, const SeedStreams& streams,
                             int iteration, const TrainConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.rollouts_per_update);
  std::vector<Episode> out(n);
  auto run = [&](std::size_t k) {
    out[k] = rollout(spec, ring, streams.derive("rollout", static_cast<std::uint64_t>(iteration) * n + k));
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), n);
  if (workers <= 1) {
    for (std::size_t k = 0; k < n; ++k) run(k);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < n; k += workers) run(k);
    });
  }
  pool.clear();
  return out;
}

double window_mean(const std::vector<CurvePoint>& curve, std::size_t from, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = from; i < from + count; ++i) s += curve[i].mean_return;
  return s / static_cast<double>(count);
}

}  // namespace

TrainResult train(advisory::PolicyModel& policy, RolloutSpec spec, const sim::RingConfig& ring,
                  const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  ring.validate();
  spec.reward_params.validate();
  const bool residual = advisory::is_residual(spec.kind);
  if (spec.kind == advisory::PolicyKind::Osl) throw ContractError("OSL has nothing to train");
  if ((residual ? spec.residual : spec.base) != &policy) {
    throw ContractError("the trained policy must be the acting policy of the rollout spec");
  }
  if (residual && !spec.base) throw ContractError("residual training needs a frozen base PCP");
  spec.mode = advisory::ActMode::Sample;
  spec.gamma = cfg.gamma;
  spec.record = false;

  nn::AdamOptimizer opt({.learning_rate = cfg.learning_rate, .beta1 = cfg.adam_beta1});
  const SeedStreams streams(cfg.seed);
  TrainResult result;
  int consecutive = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Episode> episodes = collect(spec, ring, streams, it, cfg);
    std::vector<RolloutBatch> batches;
    CurvePoint point;
    point.iteration = it;
    for (auto& ep : episodes) {
      point.mean_return += ep.batch.episode_return;
      point.mean_cf += ep.stats.cf;
      point.collision_rate += ep.batch.collision ? 1.0 : 0.0;
      batches.push_back(std::move(ep.batch));
    }
    const double n = static_cast<double>(episodes.size());
    point.mean_return /= n;
    point.mean_cf /= n;
    point.collision_rate /= n;

    const std::vector<double> adv = decision_advantages(batches, cfg.normalize_advantages);
    std::vector<Sample> samples;
    samples.reserve(adv.size());
    for (const auto& b : batches) {
      for (const auto& tr : b.transitions) samples.push_back({tr.input, tr.action, adv[samples.size()], 0.0});
    }
    bool ok = true;
    if (!samples.empty()) {
      if (cfg.estimator == TrainConfig::Estimator::Clipped) {
        const auto old = log_probs(policy.net(), samples);
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i].old_log_prob = old[i];
      }
      for (int epoch = 0; epoch < cfg.update_epochs && ok; ++epoch) {
        ok = policy_gradient_step(policy.net(), samples, opt, cfg);
      }
    }
    if (!ok) {
      point.skipped = true;
      ++result.skipped;
      spdlog::warn("iteration {}: non-finite policy loss, update skipped", it);
      if (++consecutive >= 3) {
        throw NumericError("three consecutive non-finite policy updates at iteration " + std::to_string(it));
      }
    } else {
      consecutive = 0;
    }
    result.curve.push_back(point);
    if (progress) progress(point);

    const auto w = static_cast<std::size_t>(cfg.convergence_window);
    if (cfg.early_stop && result.curve.size() >= 2 * w && result.curve.size() % w == 0) {
      const double prev = window_mean(result.curve, result.curve.size() - 2 * w, w);
      const double last = window_mean(result.curve, result.curve.size() - w, w);
      if (std::abs(last - prev) < cfg.convergence_tolerance * std::max(std::abs(prev), 1e-12)) {
        result.converged = true;
        break;
      }
    }
  }
  return result;
}

void write_learning_curve(std::span<const CurvePoint> curve, std::ostream& out) {
  out << "iteration,mean_return,mean_cf,collision_rate,skipped\n";
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d\n", p.iteration, p.mean_return, p.mean_cf,
                  p.collision_rate, p.skipped ? 1 : 0);
    out << buf;
  }
}

}  // namespace ringlab::trainer
