#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "l1bsr/core/tensor.hpp"

namespace l1bsr {

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// Handle to a value on the reverse-mode tape. Copies share the node.
template <class T>
class Var {
 public:
  using Node = detail::Node<T>;

  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Gradient accumulated by the last backward(); empty if none reached it.
  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

  T item() const { return node_->value[0]; }

  /// Builds a result node. The backward closure receives the result node and
  /// must accumulate into the parents' grad buffers (only those that
  /// require grad).
  static Var make(Tensor<T> value, std::initializer_list<Var> parents,
                  std::function<void(Node& self)> backward) {
    Var out(std::move(value));
    if (!detail::grad_mode()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const auto& p : parents) out.node_->parents.push_back(p.node_);
    Node* self = out.node_.get();
    out.node_->backward = [self, fn = std::move(backward)] { fn(*self); };
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse sweep from a scalar. Gradients accumulate into every reachable
/// node that requires grad.
template <class T>
void backward(const Var<T>& root) {
  using Node = detail::Node<T>;
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward();
  }
  // Intermediate results are not needed after the sweep; drop their edges so
  // memory is released as soon as the caller's handles go away.
  for (Node* n : order)
    if (n->backward) {
      n->parents.clear();
      n->backward = nullptr;
    }
}

template <class T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <class T>
Var<T> parameter(Tensor<T> t) {
  return Var<T>(std::move(t), true);
}

}  // namespace l1bsr
