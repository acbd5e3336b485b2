#include "cropsim/autograd.hpp"

#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "cropsim/ops.hpp"
#include "cropsim/simd/kernels.hpp"

namespace cropsim::ag {
namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
struct Frame {
  std::shared_ptr<Node<T>> node;
  size_t next_input = 0;
};

// Post-order (inputs before consumers) over nodes that require a gradient.
template <typename T>
std::vector<std::shared_ptr<Node<T>>> topo_order(std::span<const Var<T>> roots) {
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<Frame<T>> stack;
  for (const auto& root : roots) {
    if (!root.requires_grad() || visited.count(root.node())) continue;
    visited.insert(root.node());
    stack.push_back({root.node_ptr(), 0});
    while (!stack.empty()) {
      Frame<T>& top = stack.back();
      if (top.next_input < top.node->inputs.size()) {
        const Var<T>& in = top.node->inputs[top.next_input++];
        if (in.requires_grad() && !visited.count(in.node())) {
          visited.insert(in.node());
          stack.push_back({in.node_ptr(), 0});
        }
      } else {
        order.push_back(top.node);
        stack.pop_back();
      }
    }
  }
  return order;
}

template <typename T>
Var<T> accumulate(const Var<T>& a, const Var<T>& b, bool create_graph) {
  if (!a.defined()) return b;
  if (!b.defined()) return a;
  if (create_graph) return add(a, b);
  if (!(a.shape() == b.shape())) throw ShapeError("gradient shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  simd::kernels<T>().add(out.numel(), a.value().data(), b.value().data(), out.data());
  return Var<T>(std::move(out));
}

template <typename T>
void run_backward(std::span<const Var<T>> outputs, std::span<const Var<T>> grad_outputs,
                  const std::unordered_set<Node<T>*>& targets, bool accumulate_leaves, bool create_graph,
                  std::unordered_map<Node<T>*, Var<T>>* captured) {
  auto order = topo_order<T>(outputs);
  std::unordered_map<Node<T>*, bool> needed;
  needed.reserve(order.size());
  for (const auto& n : order) {
    bool need = targets.count(n.get()) > 0 || (accumulate_leaves && !n->backward);
    for (const auto& in : n->inputs)
      if (in.requires_grad() && needed[in.node()]) need = true;
    needed[n.get()] = need;
  }

  GradModeGuard mode(create_graph);
  std::unordered_map<Node<T>*, Var<T>> grads;
  for (size_t i = 0; i < outputs.size(); ++i) {
    const Var<T>& out = outputs[i];
    if (!out.requires_grad()) continue;
    Var<T> g;
    if (i < grad_outputs.size() && grad_outputs[i].defined()) {
      g = grad_outputs[i];
      if (!(g.shape() == out.shape())) throw ShapeError("grad_output shape mismatch");
    } else {
      if (out.numel() != 1) throw ShapeError("implicit gradient requires a scalar output, got " + out.shape().str());
      g = Var<T>(Tensor<T>::ones(out.shape()));
    }
    grads[out.node()] = accumulate(grads[out.node()], g, create_graph);
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    auto found = grads.find(n);
    if (found == grads.end() || !found->second.defined()) continue;
    Var<T> g = found->second;
    grads.erase(found);
    if (!(g.shape() == n->value.shape()))
      throw ShapeError(std::string("gradient shape ") + g.shape().str() + " != value shape " + n->value.shape().str() +
                       " at op " + std::string(n->op));
    if (targets.count(n) && captured) (*captured)[n] = accumulate((*captured)[n], g, create_graph);
    if (!n->backward) {
      if (accumulate_leaves) {
        if (n->grad.empty()) {
          n->grad = g.value();
        } else {
          simd::kernels<T>().axpy(n->grad.numel(), T(1), g.value().data(), n->grad.data());
        }
      }
      continue;
    }
    if (!needed[n]) continue;
    std::vector<bool> needs(n->inputs.size());
    bool any = false;
    for (size_t i = 0; i < n->inputs.size(); ++i) {
      needs[i] = n->inputs[i].requires_grad() && needed[n->inputs[i].node()];
      any = any || needs[i];
    }
    if (!any) continue;
    std::vector<Var<T>> in_grads = n->backward(g, Var<T>::from_node(*it), needs);
    for (size_t i = 0; i < n->inputs.size() && i < in_grads.size(); ++i) {
      if (!needs[i] || !in_grads[i].defined()) continue;
      Node<T>* in = n->inputs[i].node();
      grads[in] = accumulate(grads[in], in_grads[i], create_graph);
    }
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

GradModeGuard::GradModeGuard(bool enabled) : prev_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = prev_; }

template <typename T>
std::vector<Var<T>> grad(std::span<const Var<T>> outputs, std::span<const Var<T>> grad_outputs,
                         std::span<const Var<T>> inputs, bool create_graph) {
  std::unordered_set<Node<T>*> targets;
  for (const auto& in : inputs) {
    if (!in.defined()) throw std::invalid_argument("grad(): undefined input");
    targets.insert(in.node());
  }
  std::unordered_map<Node<T>*, Var<T>> captured;
  run_backward<T>(outputs, grad_outputs, targets, false, create_graph, &captured);
  std::vector<Var<T>> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = captured.find(in.node());
    if (it != captured.end() && it->second.defined()) {
      result.push_back(it->second);
    } else {
      result.push_back(Var<T>(Tensor<T>::zeros(in.shape())));
    }
  }
  return result;
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.requires_grad()) return;
  std::vector<Var<T>> outs{loss};
  run_backward<T>(outs, {}, {}, true, false, nullptr);
}

template std::vector<Var<float>> grad<float>(std::span<const Var<float>>, std::span<const Var<float>>,
                                             std::span<const Var<float>>, bool);
template std::vector<Var<double>> grad<double>(std::span<const Var<double>>, std::span<const Var<double>>,
                                               std::span<const Var<double>>, bool);
template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace cropsim::ag
