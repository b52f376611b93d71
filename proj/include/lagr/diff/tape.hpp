#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "lagr/tensor.hpp"

namespace lagr::diff {

class Tape;

/// Handle to a node of a Tape: a differentiable value (scalar or field).
/// Cheap to copy; valid as long as its tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the gradient flowing into a node and accumulates the
/// corresponding contributions into the node's parents.
using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

/// Dynamically recorded computation graph. Nodes are appended in evaluation
/// order, so reverse creation order is a valid topological order for the
/// reverse sweep. A tape is confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back({std::move(value), Tensor{}, requires_grad, nullptr});
    return Var(this, nodes_.size() - 1);
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double v, bool requires_grad = false) { return leaf(Tensor::scalar(v), requires_grad); }

  /// Appends an op output; it requires grad iff any parent does.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    for (const Var& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    nodes_.push_back({std::move(value), Tensor{}, needs, needs ? std::move(fn) : nullptr});
    return Var(this, nodes_.size() - 1);
  }

  /// Reverse sweep from a scalar root. Every requires_grad node ends up with a
  /// gradient of its value's shape (zeros where unreachable).
  void backward(const Var& root) {
    check_owned(root);
    if (nodes_[root.id()].value.size() != 1)
      throw ContractError("backward: root must be a scalar, got shape " +
                          nodes_[root.id()].value.shape().str());
    for (Node& n : nodes_) n.grad = n.requires_grad ? Tensor(n.value.shape()) : Tensor{};
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      // The callback may touch other nodes' grads; pass a copy-free reference
      // that stays valid because no nodes are appended during the sweep.
      n.backward(*this, n.grad);
    }
  }

  const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
  const Tensor& grad(const Var& v) const { return nodes_[v.id()].grad; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of v for accumulation, or nullptr if v needs none.
  Tensor* grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    return n.requires_grad ? &n.grad : nullptr;
  }

  void accumulate(const Var& v, const Tensor& g) {
    if (Tensor* buf = grad_buffer(v)) *buf += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad;
    BackwardFn backward;
  };

  void check_owned(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size())
      throw ContractError("variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline const Tensor& Var::grad() const { return tape_->grad(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

} // namespace lagr::diff
