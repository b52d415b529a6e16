#include "ringlab/nn/layers.hpp"

#include <cmath>

#include "ringlab/error.hpp"

namespace ringlab::nn {

namespace {

void fill_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

}  // namespace

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : weight_{name + ".weight", Tensor::matrix(in, out)},
      bias_{name + ".bias", Tensor::matrix(1, out)} {}

void Linear::initialize(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
  fill_uniform(weight_.value, bound, rng);
  fill_uniform(bias_.value, bound, rng);
}

Var Linear::forward(Graph& g, Var x) {
  if (x.cols() != in_features()) {
    throw DimensionError(weight_.name + ": expected input width " +
                         std::to_string(in_features()) + ", got " + std::to_string(x.cols()));
  }
  return add_row(matmul(x, g.parameter(weight_)), g.parameter(bias_));
}

std::vector<double> Linear::evaluate(std::span<const double> input) const {
  if (input.size() != in_features()) {
    throw DimensionError(weight_.name + ": expected input width " + std::to_string(in_features()) +
                         ", got " + std::to_string(input.size()));
  }
  const Tensor& w = weight_.value;
  std::vector<double> y(bias_.value.data().begin(), bias_.value.data().end());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double xr = input[r];
    for (std::size_t c = 0; c < w.cols(); ++c) y[c] += xr * w.at(r, c);
  }
  return y;
}

PerceptronNet::PerceptronNet(std::string name, std::size_t in, std::vector<std::size_t> hidden,
                             std::size_t out) {
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), width, hidden[i]);
    width = hidden[i];
  }
  layers_.emplace_back(name + "." + std::to_string(hidden.size()), width, out);
}

void PerceptronNet::initialize(Rng& rng) {
  for (Linear& layer : layers_) layer.initialize(rng);
}

Var PerceptronNet::forward(Graph& g, Var x) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(g, x);
    if (i + 1 < layers_.size()) x = tanh(x);
  }
  return x;
}

std::vector<double> PerceptronNet::evaluate(std::span<const double> input) const {
  if (input.size() != in_features()) {
    throw DimensionError("perceptron: expected input width " + std::to_string(in_features()) +
                         ", got " + std::to_string(input.size()));
  }
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Tensor& w = layers_[i].weight().value;
    const Tensor& b = layers_[i].bias().value;
    std::vector<double> y(w.cols(), 0.0);
    for (std::size_t c = 0; c < w.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < w.rows(); ++r) acc += x[r] * w.at(r, c);
      y[c] = acc + b[c];
    }
    if (i + 1 < layers_.size()) {
      for (double& v : y) v = std::tanh(v);
    }
    x = std::move(y);
  }
  return x;
}

std::size_t PerceptronNet::in_features() const {
  return layers_.empty() ? 0 : layers_.front().in_features();
}

std::size_t PerceptronNet::out_features() const {
  return layers_.empty() ? 0 : layers_.back().out_features();
}

std::vector<Parameter*> PerceptronNet::parameters() {
  std::vector<Parameter*> out;
  for (Linear& layer : layers_) {
    out.push_back(&layer.weight());
    out.push_back(&layer.bias());
  }
  return out;
}

std::vector<const Parameter*> PerceptronNet::parameters() const {
  std::vector<const Parameter*> out;
  for (const Linear& layer : layers_) {
    out.push_back(&layer.weight());
    out.push_back(&layer.bias());
  }
  return out;
}

RecurrentCell::RecurrentCell(std::string name, std::size_t in, std::size_t hidden)
    : in_(in),
      hidden_(hidden),
      weight_{name + ".weight", Tensor::matrix(in + hidden, 4 * hidden)},
      bias_{name + ".bias", Tensor::matrix(1, 4 * hidden)} {}

void RecurrentCell::initialize(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
  fill_uniform(weight_.value, bound, rng);
  fill_uniform(bias_.value, bound, rng);
}

LstmState RecurrentCell::zero_state(Graph& g, std::size_t batch) const {
  return {g.constant(Tensor::matrix(batch, hidden_)), g.constant(Tensor::matrix(batch, hidden_))};
}

LstmState RecurrentCell::forward(Graph& g, Var x, const LstmState& state) {
  if (x.cols() != in_) {
    throw DimensionError(weight_.name + ": expected input width " + std::to_string(in_) +
                         ", got " + std::to_string(x.cols()));
  }
  if (state.hidden.cols() != hidden_ || state.cell.cols() != hidden_ ||
      state.hidden.rows() != x.rows() || state.cell.rows() != x.rows()) {
    throw DimensionError(weight_.name + ": recurrent state has wrong shape");
  }
  Var gates = add_row(matmul(concat_cols(x, state.hidden), g.parameter(weight_)), g.parameter(bias_));
  Var input_gate = sigmoid(slice_cols(gates, 0, hidden_));
  Var forget_gate = sigmoid(slice_cols(gates, hidden_, hidden_));
  Var candidate = tanh(slice_cols(gates, 2 * hidden_, hidden_));
  Var output_gate = sigmoid(slice_cols(gates, 3 * hidden_, hidden_));
  Var cell = add(mul(forget_gate, state.cell), mul(input_gate, candidate));
  Var hidden = mul(output_gate, tanh(cell));
  return {hidden, cell};
}

void RecurrentCell::step(std::span<const double> x, std::vector<double>& hidden, std::vector<double>& cell) const {
  if (x.size() != in_ || hidden.size() != hidden_ || cell.size() != hidden_) {
    throw DimensionError(weight_.name + ": step received wrongly sized input or state");
  }
  const Tensor& w = weight_.value;
  std::vector<double> gates(bias_.value.data().begin(), bias_.value.data().end());
  auto accumulate = [&](std::size_t row, double v) {
    for (std::size_t c = 0; c < 4 * hidden_; ++c) gates[c] += v * w.at(row, c);
  };
  for (std::size_t r = 0; r < in_; ++r) accumulate(r, x[r]);
  for (std::size_t r = 0; r < hidden_; ++r) accumulate(in_ + r, hidden[r]);
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t j = 0; j < hidden_; ++j) {
    const double i = sigmoid(gates[j]);
    const double f = sigmoid(gates[hidden_ + j]);
    const double g = std::tanh(gates[2 * hidden_ + j]);
    const double o = sigmoid(gates[3 * hidden_ + j]);
    cell[j] = f * cell[j] + i * g;
    hidden[j] = o * std::tanh(cell[j]);
  }
}

}  // namespace ringlab::nn
