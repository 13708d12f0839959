#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "encore/tensor.hpp"

namespace encore {

// Reverse-mode autodiff over Tensor<T>. Each op produces a Node holding the
// forward value and a closure that routes the node's gradient to its parents.
// Nodes whose inputs carry no gradient are created as detached constants
// (no parents, no closure), so pure inference builds no graph.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily during backward
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward;
  bool requires_grad = false;
  bool is_param = false;
  const char* op = "";
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Var leaf(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = "leaf";
    return Var(std::move(n));
  }

  // Trainable parameter: participates in backward, value and grad persist
  // across steps.
  static Var param(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->is_param = true;
    n->op = "param";
    return Var(std::move(n));
  }

  bool defined() const { return n_ != nullptr; }
  Node<T>* node() const { return n_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return n_; }

  Tensor<T>& value() const { return n_->value; }
  Tensor<T>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  const Shape& shape() const { return n_->value.shape(); }
  i64 dim(i64 i) const { return n_->value.dim(i); }

  // scalar convenience
  double item() const {
    if (n_->value.numel() != 1)
      throw std::logic_error("item() on non-scalar var");
    return double(n_->value[0]);
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <class T>
void topo_collect(Node<T>* root, std::vector<Node<T>*>& order) {
  // iterative DFS, children pushed before parents are expanded
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (!root->requires_grad) return;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T>& ensure_grad(Node<T>& n) {
  if (!n.grad.defined()) n.grad = Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

// Runs reverse-mode accumulation from a scalar root. Intermediate values and
// gradients are freed as soon as the node's own backward has executed, which
// keeps the peak footprint close to the forward-pass footprint. Parameter
// gradients accumulate (callers zero them between steps).
template <class T>
void backward(const Var<T>& root) {
  Node<T>* r = root.node();
  if (!r) throw std::logic_error("backward on undefined var");
  if (r->value.numel() != 1)
    throw std::logic_error("backward requires a scalar root");
  if (!r->requires_grad) return;

  std::vector<Node<T>*> order;
  detail::topo_collect(r, order);

  r->grad = Tensor<T>::full(Shape{1}, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.defined()) n->backward(*n);
    if (!n->is_param) {
      n->grad.release();
      if (n != r && n->backward) n->value.release();
    }
  }
}

}  // namespace encore
