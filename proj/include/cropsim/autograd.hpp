#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// Every op records a node whose backward rule is itself written in terms of
// recorded ops, so gradients can be differentiated again (create_graph=true).
// The gradient penalty relies on this: it differentiates the norm of an
// input-gradient with respect to critic parameters.

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "cropsim/tensor.hpp"

namespace cropsim::ag {

template <typename T>
class Var;

template <typename T>
struct Node;

/// Backward rule: receives the incoming gradient, the node's own output (for
/// rules such as tanh that reuse it), and which inputs need a gradient.
/// Returns one gradient per input; undefined Vars mean "no contribution".
template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad, const Var<T>& self,
                                                     const std::vector<bool>& needs)>;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
  Tensor<T> grad;  // accumulated by backward() on leaves
  std::string_view op = "leaf";
};

bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Forces graph recording on or off for its lifetime.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// In-place access for optimizer updates of leaf parameters.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  int64_t dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return node_ && !node_->backward; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->value[0];
  }

  /// Accumulated gradient of a leaf after backward(); empty if none reached it.
  Tensor<T>& grad() { return node_->grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Records a new op result. When recording is off or no input requires a
/// gradient, the result is a constant and `backward` is dropped.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward, std::string_view op) {
  bool track = false;
  if (grad_enabled())
    for (const auto& in : inputs)
      if (in.requires_grad()) {
        track = true;
        break;
      }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var<T>::from_node(std::move(node));
}

/// Constant copy of v's value, cut from the graph.
template <typename T>
Var<T> detach(const Var<T>& v) {
  return Var<T>(v.value(), false);
}

/// Gradients of sum_i <grad_outputs[i], outputs[i]> with respect to `inputs`.
/// An empty grad_outputs means ones for scalar outputs. With create_graph the
/// returned gradients are themselves differentiable. Inputs the outputs do not
/// depend on get a zero tensor.
template <typename T>
std::vector<Var<T>> grad(std::span<const Var<T>> outputs, std::span<const Var<T>> grad_outputs,
                         std::span<const Var<T>> inputs, bool create_graph);

template <typename T>
Var<T> grad(const Var<T>& output, const Var<T>& input, bool create_graph = false) {
  std::vector<Var<T>> outs{output};
  std::vector<Var<T>> ins{input};
  return grad<T>(outs, {}, ins, create_graph)[0];
}

/// Accumulates d(loss)/d(leaf) into leaf.grad() for every reachable leaf that
/// requires a gradient. Never records a graph.
template <typename T>
void backward(const Var<T>& loss);

}  // namespace cropsim::ag
