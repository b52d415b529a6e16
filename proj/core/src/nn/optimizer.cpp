#include "ringlab/nn/optimizer.hpp"

#include <cmath>

#include "ringlab/error.hpp"

namespace ringlab::nn {

namespace {

const Tensor& gradient_for(const Parameter& p, const GradientMap& grads) {
  auto it = grads.find(p.name);
  if (it == grads.end()) throw ContractError("no gradient for parameter " + p.name);
  if (!it->second.same_shape(p.value)) {
    throw DimensionError("gradient shape " + it->second.shape_string() + " does not match " +
                         p.name + " " + p.value.shape_string());
  }
  return it->second;
}

void check_finite(std::span<Parameter* const> params, const GradientMap& grads) {
  for (const Parameter* p : params) {
    if (!gradient_for(*p, grads).all_finite()) {
      throw NumericError("non-finite gradient for " + p->name + "; update rejected");
    }
  }
}

}  // namespace

SgdOptimizer::SgdOptimizer(double learning_rate) : learning_rate_(learning_rate) {
  if (!(learning_rate >= 0.0)) throw ContractError("learning rate must be non-negative");
}

void SgdOptimizer::apply(std::span<Parameter* const> params, const GradientMap& grads) {
  check_finite(params, grads);
  for (Parameter* p : params) {
    const Tensor& g = gradient_for(*p, grads);
    for (std::size_t i = 0; i < g.size(); ++i) p->value[i] -= learning_rate_ * g[i];
  }
}

AdamOptimizer::AdamOptimizer(Options options) : options_(options) {
  if (!(options_.learning_rate >= 0.0)) throw ContractError("learning rate must be non-negative");
}

void AdamOptimizer::apply(std::span<Parameter* const> params, const GradientMap& grads) {
  check_finite(params, grads);
  ++steps_;
  const double correction1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  for (Parameter* p : params) {
    const Tensor& g = gradient_for(*p, grads);
    Moments& m = moments_[p->name];
    if (m.first.size() != g.size()) {
      m.first.assign(g.size(), 0.0);
      m.second.assign(g.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      m.first[i] = options_.beta1 * m.first[i] + (1.0 - options_.beta1) * g[i];
      m.second[i] = options_.beta2 * m.second[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double m_hat = m.first[i] / correction1;
      const double v_hat = m.second[i] / correction2;
      p->value[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
    }
  }
}

double squared_norm(const GradientMap& grads) {
  double total = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) total += v * v;
  }
  return total;
}

void clip_global_norm(GradientMap& grads, double max_norm) {
  const double norm = std::sqrt(squared_norm(grads));
  if (!(norm > max_norm) || max_norm <= 0.0) return;
  const double factor = max_norm / norm;
  for (auto& [name, g] : grads) {
    for (double& v : g.data()) v *= factor;
  }
}

}  // namespace ringlab::nn
