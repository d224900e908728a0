#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gril/errors.hpp"
#include "gril/numerics/tensor.hpp"

namespace gril {

// A named trainable tensor. Gradients from every tape that references the
// parameter accumulate into `grad` until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.values().begin(), grad.values().end(), 0.0); }
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
};

// Reverse-mode tape. Nodes are appended in creation order, which is a valid
// topological order, so backward is a single reverse sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push(std::move(t), false, {}, nullptr); }
  Var leaf(Tensor t) { return push(std::move(t), true, {}, nullptr); }

  // Binds a parameter. Repeated binds of the same parameter share one node.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    Var v = push(p.value, true, {}, nullptr);
    param_nodes_.emplace(&p, v.id);
    bound_params_.emplace_back(&p, v.id);
    return v;
  }

  // Same as param() but recorded as a constant: the forward value is identical
  // and no gradient reaches the parameter.
  Var frozen(const Parameter& p) { return constant(p.value); }

  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool rg = false;
    for (std::size_t i : inputs) rg = rg || nodes_[i].requires_grad;
    return push(std::move(value), rg, std::move(inputs), rg ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient of the last backward() target w.r.t. node `v` (zeros if unreached).
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor(n.value.shape());
    return Tensor(n.value.shape(), n.grad);
  }

  // Mutable gradient buffer for node `id`; allocated on first use.
  std::span<double> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  std::span<const double> upstream(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var loss) {
    if (loss.tape != this) throw Error("backward on a variable from another tape");
    if (nodes_[loss.id].value.size() != 1) {
      throw DimensionError("backward target must be a scalar, got " + shape_str(nodes_[loss.id].value.shape()));
    }
    if (backward_done_) throw Error("backward already run on this tape");
    backward_done_ = true;
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    for (auto& [p, id] : bound_params_) {
      const Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      auto& g = p->grad.values();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
  };

  Var push(Tensor t, bool rg, std::vector<std::size_t> inputs, BackwardFn fn) {
    if (!t.all_finite()) throw NumericError("non-finite value recorded on tape (node " + std::to_string(nodes_.size()) + ")");
    nodes_.push_back(Node{std::move(t), rg, std::move(inputs), std::move(fn), {}});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::vector<std::pair<Parameter*, std::size_t>> bound_params_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

}  // namespace gril
