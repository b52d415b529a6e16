#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ringlab/nn/tensor.hpp"

namespace ringlab::nn {

// A named trainable array. Networks own their parameters; graphs only borrow
// them for the lifetime of one forward/backward pass.
struct Parameter {
  std::string name;
  Tensor value;
};

// Gradients keyed by parameter name.
using GradientMap = std::map<std::string, Tensor>;

class Graph;

// Handle to a node of a Graph.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// creation order is a valid topological order for backpropagation.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // One leaf per parameter; repeated calls return the same node.
  Var parameter(Parameter& param);

  // Exact gradients of a 1x1 loss with respect to every parameter reached.
  // Parameters that were registered but do not influence the loss get zeros.
  GradientMap backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Kernel plumbing used by the op library.
  Var emit(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);
  Tensor& grad_buffer(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Differentiable operations. All operands must belong to the same graph.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
// a (r x c) + row (1 x c), broadcast over rows.
Var add_row(Var a, Var row);
// a (r x c) * column (r x 1), broadcast over columns.
Var mul_col(Var a, Var column);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var square(Var a);
// Euclidean norm of every row, r x 1. The gradient at a zero row is zero.
Var row_norm(Var a);
Var sum(Var a);
Var mean(Var a);
// Sum over columns, r x 1.
Var sum_cols(Var a);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_cols(Var a, Var b);
Var log_softmax(Var a);
Var softmax(Var a);
// out[r] = a[r, index[r]], r x 1.
Var pick(Var a, std::span<const std::size_t> index);

// Numerically stable row-wise softmax outside of any graph.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace ringlab::nn
