#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "ringlab/nn/graph.hpp"

namespace ringlab::nn {

// Plain gradient descent: theta <- theta - lr * g.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double learning_rate);

  double learning_rate() const { return learning_rate_; }

  // Throws NumericError (and leaves every parameter untouched) if any gradient
  // is non-finite; throws ContractError if a parameter has no gradient entry.
  void apply(std::span<Parameter* const> params, const GradientMap& grads);

 private:
  double learning_rate_;
};

// Adam with bias correction. beta1 = 0 gives the momentum-free variant.
class AdamOptimizer {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  explicit AdamOptimizer(Options options);

  const Options& options() const { return options_; }
  long steps() const { return steps_; }

  void apply(std::span<Parameter* const> params, const GradientMap& grads);

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  Options options_;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

// Sum of squares over every gradient entry.
double squared_norm(const GradientMap& grads);
// Rescales all gradients in place so their global norm is at most max_norm.
void clip_global_norm(GradientMap& grads, double max_norm);

}  // namespace ringlab::nn
