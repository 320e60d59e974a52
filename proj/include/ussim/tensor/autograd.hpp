#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ussim/core/error.hpp"
#include "ussim/tensor/tensor.hpp"

namespace ussim::tensor {

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn && inputs.empty(); }

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

// Handle to a graph node. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Wraps an op result. The backward closure is kept only when recording is on and
// some input needs a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& v : inputs) node->inputs.push_back(v.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var<T>(std::move(node));
}

// Reverse pass from a scalar root. Leaf gradients accumulate; interior nodes release
// their closures, so a second call on the same root throws.
template <class T>
void backward(const Var<T>& root) {
  if (!root) throw GraphError("backward: empty root");
  if (root.value().size() != 1) {
    throw GraphError("backward: root must be a scalar, got shape " + to_string(root.shape()));
  }
  auto& rn = *root.node();
  if (rn.consumed) throw GraphError("backward: graph already consumed");
  if (!rn.requires_grad) throw GraphError("backward: root does not depend on any parameter");

  // Iterative DFS post-order. `order` owns the nodes: releasing inputs below would
  // otherwise free nodes that are still waiting for their turn.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{root.node(), 0}};
  seen.insert(&rn);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      auto child = top.first->inputs[top.second++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  rn.grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    if (!n->is_leaf()) {
      n->backward_fn = nullptr;
      n->inputs.clear();
      if (n != &rn) n->grad = Tensor<T>();
    }
  }
  rn.consumed = true;
}

}  // namespace ussim::tensor
