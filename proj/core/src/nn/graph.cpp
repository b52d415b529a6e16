#include "ringlab/nn/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ringlab/error.hpp"

namespace ringlab::nn {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap view(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

Graph& same_graph(Var a, Var b) {
  if (a.graph() == nullptr || a.graph() != b.graph()) {
    throw ContractError("operands belong to different graphs");
  }
  return *a.graph();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

Tensor like(const Tensor& t, double fill = 0.0) { return Tensor::matrix(t.rows(), t.cols(), fill); }

// Elementwise unary op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor y = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa, deriv](Graph& gr, std::size_t self) {
    if (!gr.needs_grad(pa)) return;
    const Tensor& x = gr.value(pa);
    const Tensor& y = gr.value(self);
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad_buffer(pa);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

const Tensor& Var::value() const {
  if (graph_ == nullptr) throw ContractError("use of an unbound Var");
  return graph_->value(id_);
}

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var(this, it->second);
  Node node;
  node.value = param.value;
  node.param = &param;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Graph::emit(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = std::any_of(parents.begin(), parents.end(),
                                [this](std::size_t p) { return nodes_[p].needs_grad; });
  node.parents = std::move(parents);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad = like(node.value);
  return node.grad;
}

GradientMap Graph::backward(Var loss) {
  if (loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  if (loss.value().size() != 1) {
    throw ContractError("backward called on non-scalar node of shape " +
                        loss.value().shape_string());
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, i);
  }
  GradientMap grads;
  for (const auto& [param, id] : param_nodes_) {
    const Node& node = nodes_[id];
    Tensor g = node.grad.empty() ? like(node.value) : node.grad;
    auto [it, inserted] = grads.emplace(param->name, std::move(g));
    if (!inserted) throw ContractError("duplicate parameter name " + param->name);
  }
  return grads;
}

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.cols() != w.rows()) {
    throw DimensionError("matmul: " + x.shape_string() + " x " + w.shape_string());
  }
  Tensor y = Tensor::matrix(x.rows(), w.cols());
  view(y).noalias() = view(x) * view(w);
  const std::size_t pa = a.id(), pb = b.id();
  return g.emit(std::move(y), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)).noalias() += view(dy) * view(gr.value(pb)).transpose();
    if (gr.needs_grad(pb)) view(gr.grad_buffer(pb)).noalias() += view(gr.value(pa)).transpose() * view(dy);
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  view(y) += view(b.value());
  const std::size_t pa = a.id(), pb = b.id();
  return g.emit(std::move(y), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)) += view(dy);
    if (gr.needs_grad(pb)) view(gr.grad_buffer(pb)) += view(dy);
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  view(y) -= view(b.value());
  const std::size_t pa = a.id(), pb = b.id();
  return g.emit(std::move(y), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)) += view(dy);
    if (gr.needs_grad(pb)) view(gr.grad_buffer(pb)) -= view(dy);
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  view(y).array() *= view(b.value()).array();
  const std::size_t pa = a.id(), pb = b.id();
  return g.emit(std::move(y), {pa, pb}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)).array() += view(dy).array() * view(gr.value(pb)).array();
    if (gr.needs_grad(pb)) view(gr.grad_buffer(pb)).array() += view(dy).array() * view(gr.value(pa)).array();
  });
}

Var scale(Var a, double factor) {
  Graph& g = *a.graph();
  Tensor y = a.value();
  view(y) *= factor;
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa, factor](Graph& gr, std::size_t self) {
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)) += factor * view(gr.grad(self));
  });
}

Var add_scalar(Var a, double value) {
  Graph& g = *a.graph();
  Tensor y = a.value();
  view(y).array() += value;
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa](Graph& gr, std::size_t self) {
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)) += view(gr.grad(self));
  });
}

Var add_row(Var a, Var row) {
  Graph& g = same_graph(a, row);
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw DimensionError("add_row: " + x.shape_string() + " + " + r.shape_string());
  }
  Tensor y = x;
  view(y).rowwise() += view(r).row(0);
  const std::size_t pa = a.id(), pr = row.id();
  return g.emit(std::move(y), {pa, pr}, [pa, pr](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)) += view(dy);
    if (gr.needs_grad(pr)) view(gr.grad_buffer(pr)).row(0) += view(dy).colwise().sum();
  });
}

Var mul_col(Var a, Var column) {
  Graph& g = same_graph(a, column);
  const Tensor& x = a.value();
  const Tensor& c = column.value();
  if (c.cols() != 1 || c.rows() != x.rows()) {
    throw DimensionError("mul_col: " + x.shape_string() + " * " + c.shape_string());
  }
  Tensor y = x;
  for (std::size_t r = 0; r < x.rows(); ++r) view(y).row(r) *= c[r];
  const std::size_t pa = a.id(), pc = column.id();
  return g.emit(std::move(y), {pa, pc}, [pa, pc](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    const Tensor& cv = gr.value(pc);
    if (gr.needs_grad(pa)) {
      Tensor& dx = gr.grad_buffer(pa);
      for (std::size_t r = 0; r < dy.rows(); ++r) view(dx).row(r) += cv[r] * view(dy).row(r);
    }
    if (gr.needs_grad(pc)) {
      Tensor& dc = gr.grad_buffer(pc);
      const Tensor& xv = gr.value(pa);
      for (std::size_t r = 0; r < dy.rows(); ++r) dc[r] += view(dy).row(r).dot(view(xv).row(r));
    }
  });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var row_norm(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor y = Tensor::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) y[r] = view(x).row(r).norm();
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa](Graph& gr, std::size_t self) {
    if (!gr.needs_grad(pa)) return;
    const Tensor& xv = gr.value(pa);
    const Tensor& yv = gr.value(self);
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad_buffer(pa);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      if (yv[r] == 0.0) continue;
      view(dx).row(r) += (dy[r] / yv[r]) * view(xv).row(r);
    }
  });
}

Var sum(Var a) {
  Graph& g = *a.graph();
  Tensor y = Tensor::scalar(view(a.value()).sum());
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa](Graph& gr, std::size_t self) {
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)).array() += gr.grad(self)[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var sum_cols(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor y = Tensor::matrix(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) y[r] = view(x).row(r).sum();
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa](Graph& gr, std::size_t self) {
    if (!gr.needs_grad(pa)) return;
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad_buffer(pa);
    for (std::size_t r = 0; r < dx.rows(); ++r) view(dx).row(r).array() += dy[r];
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  if (start + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + x.shape_string());
  }
  Tensor y = Tensor::matrix(x.rows(), count);
  view(y) = view(x).middleCols(start, count);
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa, start, count](Graph& gr, std::size_t self) {
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)).middleCols(start, count) += view(gr.grad(self));
  });
}

Var concat_cols(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  if (x.rows() != z.rows()) {
    throw DimensionError("concat_cols: " + x.shape_string() + " | " + z.shape_string());
  }
  Tensor y = Tensor::matrix(x.rows(), x.cols() + z.cols());
  view(y).leftCols(x.cols()) = view(x);
  view(y).rightCols(z.cols()) = view(z);
  const std::size_t pa = a.id(), pb = b.id();
  const std::size_t left = x.cols(), right = z.cols();
  return g.emit(std::move(y), {pa, pb}, [pa, pb, left, right](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (gr.needs_grad(pa)) view(gr.grad_buffer(pa)) += view(dy).leftCols(left);
    if (gr.needs_grad(pb)) view(gr.grad_buffer(pb)) += view(dy).rightCols(right);
  });
}

Var log_softmax(Var a) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  Tensor y = like(x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double m = view(x).row(r).maxCoeff();
    const double lse = m + std::log((view(x).row(r).array() - m).exp().sum());
    view(y).row(r) = view(x).row(r).array() - lse;
  }
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa](Graph& gr, std::size_t self) {
    if (!gr.needs_grad(pa)) return;
    const Tensor& yv = gr.value(self);
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad_buffer(pa);
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      const double total = view(dy).row(r).sum();
      view(dx).row(r).array() += view(dy).row(r).array() - view(yv).row(r).array().exp() * total;
    }
  });
}

Var softmax(Var a) { return exp(log_softmax(a)); }

Var pick(Var a, std::span<const std::size_t> index) {
  Graph& g = *a.graph();
  const Tensor& x = a.value();
  if (index.size() != x.rows()) {
    throw DimensionError("pick: " + std::to_string(index.size()) + " indices for " +
                         x.shape_string());
  }
  Tensor y = Tensor::matrix(x.rows(), 1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (idx[r] >= x.cols()) throw DimensionError("pick: index out of range");
    y[r] = x.at(r, idx[r]);
  }
  const std::size_t pa = a.id();
  return g.emit(std::move(y), {pa}, [pa, idx = std::move(idx)](Graph& gr, std::size_t self) {
    if (!gr.needs_grad(pa)) return;
    const Tensor& dy = gr.grad(self);
    Tensor& dx = gr.grad_buffer(pa);
    for (std::size_t r = 0; r < idx.size(); ++r) dx.at(r, idx[r]) += dy[r];
  });
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

}  // namespace ringlab::nn
