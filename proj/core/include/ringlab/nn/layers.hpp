#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ringlab/nn/graph.hpp"
#include "ringlab/random.hpp"

namespace ringlab::nn {

enum class Activation { Linear, Tanh };

// Fully connected layer y = x W + b with W stored (in x out).
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  // Uniform in +-1/sqrt(fan_in).
  void initialize(Rng& rng);

  Var forward(Graph& g, Var x);
  std::vector<double> evaluate(std::span<const double> input) const;

  std::size_t in_features() const { return weight_.value.rows(); }
  std::size_t out_features() const { return weight_.value.cols(); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
};

// Multi-layer perceptron: tanh hidden layers, linear output layer.
class PerceptronNet {
 public:
  PerceptronNet() = default;
  PerceptronNet(std::string name, std::size_t in, std::vector<std::size_t> hidden, std::size_t out);

  void initialize(Rng& rng);

  // Batched forward on the graph: x is (batch x in).
  Var forward(Graph& g, Var x);
  // Graph-free evaluation of a single input row, used on rollout hot paths.
  std::vector<double> evaluate(std::span<const double> input) const;

  std::size_t in_features() const;
  std::size_t out_features() const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::vector<Linear> layers_;
};

struct LstmState {
  Var hidden;
  Var cell;
};

// Standard LSTM cell; gate order in the fused weight is (input, forget, cell, output).
class RecurrentCell {
 public:
  RecurrentCell() = default;
  RecurrentCell(std::string name, std::size_t in, std::size_t hidden);

  // Uniform in +-1/sqrt(hidden) for weights and biases.
  void initialize(Rng& rng);

  LstmState zero_state(Graph& g, std::size_t batch) const;
  LstmState forward(Graph& g, Var x, const LstmState& state);
  // Graph-free step for a single row; updates hidden and cell in place.
  void step(std::span<const double> x, std::vector<double>& hidden, std::vector<double>& cell) const;

  std::size_t in_features() const { return in_; }
  std::size_t hidden_size() const { return hidden_; }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }
  std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }
  std::vector<const Parameter*> parameters() const { return {&weight_, &bias_}; }

 private:
  std::size_t in_ = 0;
  std::size_t hidden_ = 0;
  Parameter weight_;  // (in + hidden) x 4 hidden
  Parameter bias_;    // 1 x 4 hidden
};

}  // namespace ringlab::nn
