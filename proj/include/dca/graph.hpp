#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dca/error.hpp"
#include "dca/losses.hpp"
#include "dca/tensor.hpp"

namespace dca {

using NodeId = std::size_t;


enum class Op {
  input,        // fed per forward call; shape [batch, ...declared]
  parameter,    // view into the flat parameter vector
  matmul,       // x[B,in] * W^T with W stored [out,in]
  bias_add,     // x[B,out] + b[out]
  relu,
  add,          // elementwise, identical shapes (skip connections, scalar sums)
  scale,        // x * factor
  log_softmax,  // row-wise over the last axis
  nll,          // mean -log p[y]; args: log-probs, labels [B]
  kl,           // mean KL(ref || p); args: log-probs, reference [B,C]
};

// Reverse-mode differentiable graph over a flat parameter vector. Nodes are
// appended in topological order: every argument precedes its user, forward
// runs in list order and backward in exact reverse.
class Graph {
 public:
  struct Node {
    Op op;
    std::vector<NodeId> args;
    Shape shape;               // parameter shape, or trailing input dims
    std::size_t offset = 0;    // parameter offset into the flat vector
    double factor = 1.0;       // scale factor, or KL weight
  };

  NodeId input(Shape trailing) {
    input_nodes_.push_back(nodes_.size());
    return push({Op::input, {}, std::move(trailing)});
  }

  NodeId parameter(std::size_t offset, Shape shape) {
    param_count_ = std::max(param_count_, offset + shape_size(shape));
    Node n{Op::parameter, {}, std::move(shape)};
    n.offset = offset;
    return push(std::move(n));
  }

  NodeId matmul(NodeId x, NodeId w) { return push({Op::matmul, {x, w}, {}}); }
  NodeId bias_add(NodeId x, NodeId b) { return push({Op::bias_add, {x, b}, {}}); }
  NodeId relu(NodeId x) { return push({Op::relu, {x}, {}}); }
  NodeId add(NodeId a, NodeId b) { return push({Op::add, {a, b}, {}}); }
  NodeId scale(NodeId x, double factor) {
    Node n{Op::scale, {x}, {}};
    n.factor = factor;
    return push(std::move(n));
  }
  NodeId log_softmax(NodeId x) { return push({Op::log_softmax, {x}, {}}); }
  NodeId nll(NodeId log_probs, NodeId labels) { return push({Op::nll, {log_probs, labels}, {}}); }
  NodeId kl(NodeId log_probs, NodeId reference, double weight = 1.0) {
    Node n{Op::kl, {log_probs, reference}, {}};
    n.factor = weight;
    return push(std::move(n));
  }

  // Declares the total parameter count when it exceeds the highest slot used.
  void set_parameter_count(std::size_t count) { param_count_ = std::max(param_count_, count); }
  std::size_t parameter_count() const noexcept { return param_count_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<NodeId>& inputs() const noexcept { return input_nodes_; }

  void set_output(NodeId id) {
    if (id >= nodes_.size()) throw DimensionError("output node out of range");
    output_ = id;
  }
  NodeId output() const noexcept { return output_; }

  // Evaluates every node. `inputs` are matched to input nodes in declaration
  // order. Returns the output node's value.
  const Tensor& forward(std::span<const double> params, std::span<const Tensor> inputs);
  const Tensor& forward(std::span<const double> params, const Tensor& input) {
    return forward(params, std::span<const Tensor>(&input, 1));
  }

  // Propagates `seed` (same shape as the output value) back to the parameters
  // and returns d(seed . output)/d(params).
  const std::vector<double>& backward(const Tensor& seed);
  // Scalar output convenience.
  const std::vector<double>& backward(double seed = 1.0) {
    return backward(Tensor(value(output_).shape(), seed));
  }

  const Tensor& value(NodeId id) const {
    if (!forwarded_) throw StateError("graph values read before forward");
    return values_.at(id);
  }
  const std::vector<double>& parameter_grad() const noexcept { return param_grad_; }
  // Log-probabilities that hit the probability floor during the last forward.
  std::size_t clamp_count() const noexcept { return clamped_; }

 private:
  NodeId push(Node n) {
    for (NodeId a : n.args)
      if (a >= nodes_.size()) throw DimensionError("graph argument refers to a later node");
    nodes_.push_back(std::move(n));
    output_ = nodes_.size() - 1;
    forwarded_ = false;
    return output_;
  }

  static std::vector<int> as_labels(const Tensor& t) {
    std::vector<int> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double v = t[i];
      if (v != std::floor(v) || v < 0 || v > 1e9) throw DataError("label value is not a class index");
      out[i] = static_cast<int>(v);
    }
    return out;
  }

  void eval_node(NodeId id, std::span<const double> params, std::span<const Tensor> inputs,
                 std::size_t& next_input);
  void backprop_node(NodeId id, std::vector<Tensor>& grads);

  std::vector<Node> nodes_;
  std::vector<NodeId> input_nodes_;
  std::size_t param_count_ = 0;
  NodeId output_ = 0;

  std::vector<Tensor> values_;
  std::vector<LossResult> loss_cache_;
  std::vector<double> param_grad_;
  std::size_t clamped_ = 0;
  bool forwarded_ = false;
};

inline const Tensor& Graph::forward(std::span<const double> params, std::span<const Tensor> inputs) {
  if (nodes_.empty()) throw StateError("empty graph");
  if (params.size() != param_count_)
    throw DimensionError("expected " + std::to_string(param_count_) + " parameters, got " +
                         std::to_string(params.size()));
  if (inputs.size() != input_nodes_.size())
    throw DimensionError("expected " + std::to_string(input_nodes_.size()) + " inputs, got " +
                         std::to_string(inputs.size()));
  forwarded_ = false;
  values_.assign(nodes_.size(), Tensor{});
  loss_cache_.assign(nodes_.size(), LossResult{});
  clamped_ = 0;
  std::size_t next_input = 0;
  for (NodeId id = 0; id < nodes_.size(); ++id) eval_node(id, params, inputs, next_input);
  forwarded_ = true;
  const Tensor& out = values_[output_];
  if (!out.all_finite()) throw NumericError("non-finite graph output");
  return out;
}

inline void Graph::eval_node(NodeId id, std::span<const double> params, std::span<const Tensor> inputs,
                             std::size_t& next_input) {
  const Node& n = nodes_[id];
  Tensor& out = values_[id];
  auto arg = [&](std::size_t k) -> const Tensor& { return values_[n.args[k]]; };
  switch (n.op) {
    case Op::input: {
      const Tensor& in = inputs[next_input++];
      if (in.rank() != n.shape.size() + 1 ||
          !std::equal(n.shape.begin(), n.shape.end(), in.shape().begin() + 1))
        throw DimensionError("input shape " + shape_string(in.shape()) +
                             " does not match [batch] + " + shape_string(n.shape));
      out = in;
      break;
    }
    case Op::parameter: {
      auto first = params.begin() + static_cast<std::ptrdiff_t>(n.offset);
      out = Tensor(n.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(shape_size(n.shape))));
      break;
    }
    case Op::matmul: {
      const Tensor& x = arg(0);
      const Tensor& w = arg(1);
      if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw DimensionError("matmul shape mismatch " + shape_string(x.shape()) + " x " +
                             shape_string(w.shape()) + "^T");
      const std::size_t batch = x.dim(0), in = x.dim(1), outd = w.dim(0);
      out = Tensor(Shape{batch, outd});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < outd; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < in; ++i) acc += x(b, i) * w(o, i);
          out(b, o) = acc;
        }
      break;
    }
    case Op::bias_add: {
      const Tensor& x = arg(0);
      const Tensor& bias = arg(1);
      if (x.rank() != 2 || bias.size() != x.dim(1)) throw DimensionError("bias_add shape mismatch");
      out = x;
      for (std::size_t b = 0; b < x.dim(0); ++b)
        for (std::size_t o = 0; o < x.dim(1); ++o) out(b, o) += bias[o];
      break;
    }
    case Op::relu:
      out = arg(0);
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Op::add: {
      if (arg(0).shape() != arg(1).shape()) throw DimensionError("add shape mismatch");
      out = arg(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += arg(1)[i];
      break;
    }
    case Op::scale:
      out = arg(0);
      for (double& v : out.data()) v *= n.factor;
      break;
    case Op::log_softmax:
      out = dca::log_softmax(arg(0));
      break;
    case Op::nll: {
      const auto labels = as_labels(arg(1));
      loss_cache_[id] = dca::nll(arg(0), labels);
      clamped_ += loss_cache_[id].clamped;
      out = Tensor::scalar(loss_cache_[id].value);
      break;
    }
    case Op::kl: {
      LossResult r;
      r.grad_log_probs = Tensor(arg(0).shape());
      detail::add_kl(arg(0), ReferenceDistribution(arg(1)).probs(), 1.0, r);
      clamped_ += r.clamped;
      out = Tensor::scalar(n.factor * r.kl);
      loss_cache_[id] = std::move(r);
      break;
    }
  }
}

inline const std::vector<double>& Graph::backward(const Tensor& seed) {
  if (!forwarded_) throw StateError("backward called before forward");
  if (seed.shape() != values_[output_].shape())
    throw DimensionError("seed shape " + shape_string(seed.shape()) + " != output shape " +
                         shape_string(values_[output_].shape()));
  std::vector<Tensor> grads(nodes_.size());
  grads[output_] = seed;
  param_grad_.assign(param_count_, 0.0);
  for (NodeId id = output_ + 1; id-- > 0;) backprop_node(id, grads);
  for (double g : param_grad_)
    if (!std::isfinite(g)) throw NumericError("non-finite parameter gradient");
  return param_grad_;
}

inline void Graph::backprop_node(NodeId id, std::vector<Tensor>& grads) {
  Tensor& g = grads[id];
  if (g.size() == 0 && values_[id].size() != 0) return;  // not on the path to the output
  const Node& n = nodes_[id];
  auto accumulate = [&](NodeId target, const Tensor& delta) {
    Tensor& t = grads[target];
    if (t.size() == 0 && delta.size() != 0) {
      t = delta;
      return;
    }
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += delta[i];
  };
  switch (n.op) {
    case Op::input:
      break;
    case Op::parameter:
      for (std::size_t i = 0; i < g.size(); ++i) param_grad_[n.offset + i] += g[i];
      break;
    case Op::matmul: {
      const Tensor& x = values_[n.args[0]];
      const Tensor& w = values_[n.args[1]];
      const std::size_t batch = x.dim(0), in = x.dim(1), outd = w.dim(0);
      Tensor dx(x.shape()), dw(w.shape());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < outd; ++o) {
          const double go = g(b, o);
          if (go == 0.0) continue;
          for (std::size_t i = 0; i < in; ++i) {
            dx(b, i) += go * w(o, i);
            dw(o, i) += go * x(b, i);
          }
        }
      accumulate(n.args[0], dx);
      accumulate(n.args[1], dw);
      break;
    }
    case Op::bias_add: {
      Tensor db(values_[n.args[1]].shape());
      for (std::size_t b = 0; b < g.dim(0); ++b)
        for (std::size_t o = 0; o < g.dim(1); ++o) db[o] += g(b, o);
      accumulate(n.args[0], g);
      accumulate(n.args[1], db);
      break;
    }
    case Op::relu: {
      Tensor dx = g;
      const Tensor& y = values_[id];
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(y[i] > 0.0)) dx[i] = 0.0;
      accumulate(n.args[0], dx);
      break;
    }
    case Op::add:
      accumulate(n.args[0], g);
      accumulate(n.args[1], g);
      break;
    case Op::scale: {
      Tensor dx = g;
      for (double& v : dx.data()) v *= n.factor;
      accumulate(n.args[0], dx);
      break;
    }
    case Op::log_softmax:
      accumulate(n.args[0], log_softmax_backward(values_[id], g));
      break;
    case Op::nll:
    case Op::kl: {
      const double upstream = g[0] * (n.op == Op::kl ? n.factor : 1.0);
      Tensor d = loss_cache_[id].grad_log_probs;
      for (double& v : d.data()) v *= upstream;
      accumulate(n.args[0], d);
      break;
    }
  }
}

}  // namespace dca
