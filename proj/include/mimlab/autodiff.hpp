#pragma once

#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mimlab/tensor.hpp"

namespace mimlab {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Leaf gradients produced by one backward pass, keyed by tape id.
template <typename Scalar>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor<Scalar>> grads) : grads_(std::move(grads)) {}

  const Tensor<Scalar>& at(int id) const { return grads_.at(static_cast<std::size_t>(id)); }
  const Tensor<Scalar>& operator[](const Var<Scalar>& v) const { return at(v.id()); }
  Tensor<Scalar>&& take(const Var<Scalar>& v) { return std::move(grads_.at(static_cast<std::size_t>(v.id()))); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Tensor<Scalar>> grads_;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted; backward walks it in reverse.
template <typename Scalar>
class Tape {
 public:
  using TensorT = Tensor<Scalar>;
  using BackwardFn = std::function<void(Tape&, const TensorT& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(TensorT value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, requires_grad, true});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  Var<Scalar> constant(TensorT value) { return leaf(std::move(value), false); }

  /// Appends a primitive result. The backward function is kept only when
  /// some input needs a gradient.
  Var<Scalar> record(TensorT value, std::vector<int> inputs, BackwardFn backward) {
    bool needs = false;
    for (int id : inputs) needs = needs || nodes_[static_cast<std::size_t>(id)].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, std::move(inputs), needs ? std::move(backward) : nullptr, needs, false});
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  /// Sets the backward function of an already recorded node, for closures
  /// that need the node's own id (to read the saved output).
  Var<Scalar> attach_backward(const Var<Scalar>& out, BackwardFn backward) {
    Node& n = nodes_.at(static_cast<std::size_t>(out.id()));
    if (n.requires_grad) n.backward = std::move(backward);
    return out;
  }

  const TensorT& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first use.
  TensorT& grad_slot(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!has_grad(n)) n.grad = TensorT::zeros(n.value.shape());
    return n.grad;
  }

  /// grad(id) += expr, where expr has the rows() x cols() view shape.
  template <typename Expr>
  void accumulate(int id, const Expr& expr) {
    if (!requires_grad(id)) return;
    grad_slot(id).matrix() += expr;
  }

  /// Runs one reverse sweep from a scalar loss. Every leaf receives a
  /// gradient tensor (zeros when unreachable); interior gradients are freed.
  Gradients<Scalar> backward(const Var<Scalar>& loss) {
    if (loss.tape() != this) throw ShapeError("backward: loss belongs to a different tape");
    const TensorT& lv = value(loss.id());
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
    for (Node& n : nodes_) n.grad = TensorT();
    if (requires_grad(loss.id())) grad_slot(loss.id()).data().setOnes();

    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.is_leaf || !n.backward || !has_grad(n)) continue;
      TensorT grad = std::move(n.grad);
      n.grad = TensorT();
      n.backward(*this, grad);
    }

    std::vector<TensorT> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (!n.is_leaf) continue;
      if (has_grad(n))
        grads[i] = std::move(n.grad);
      else
        grads[i] = TensorT::zeros(n.value.shape());
      n.grad = TensorT();
    }
    return Gradients<Scalar>(std::move(grads));
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad;
    bool is_leaf;
  };

  static bool has_grad(const Node& n) { return !n.grad.empty() && n.grad.shape() == n.value.shape(); }

  std::deque<Node> nodes_;  // stable references across appends
};

}  // namespace mimlab
