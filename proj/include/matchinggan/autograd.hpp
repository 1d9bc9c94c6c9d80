#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "matchinggan/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// Every op produces a Var whose node remembers its parents and a closure that
// pushes the node's gradient back into them. Parameters are leaf Vars with
// requires_grad set; gradients accumulate into them until zero_grad().

namespace mgan::ag {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  bool has_grad() const { return !grad.empty() || value.empty(); }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph construction in its scope.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var parameter(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient accumulated so far; a zero tensor if nothing reached this node.
  Tensor<T> grad() const {
    if (node_->grad.shape() == node_->value.shape()) return node_->grad;
    return Tensor<T>(node_->value.shape());
  }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }
  T item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  Node<T>* raw() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Creates the output node of an op. Parents and backward closure are dropped
// when no parent needs a gradient or grad mode is off.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

// Gradient slot of parent i, or nullptr when that parent is not tracked.
template <class T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = self.parents.at(i);
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

template <class T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1)
    throw ShapeError("backward() needs a scalar root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.raw(), 0}};
  seen.insert(root.raw());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.raw()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.shape() == n->value.shape()) n->backward(*n);
  }
}

}  // namespace mgan::ag
