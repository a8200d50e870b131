#pragma once

#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "bapn/error.hpp"

namespace bapn::nn {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    require(d >= 0, ErrorCode::ShapeMismatch, "negative dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

/// One node of the computation graph. `backward_fn` reads this node's
/// grad and accumulates into the parents' grads; parents are kept alive
/// by shared ownership so a Tensor handle to the loss retains the whole
/// graph until backward() runs.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  size_t numel() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Value-semantics handle to a graph node. Scalar type T is float for
/// training and double for finite-difference verification.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<T> v, bool requires_grad = false) {
    require(v.size() == shape_numel(shape), ErrorCode::ShapeMismatch,
            "value size does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->value.size(); }
  int dim(int i) const { return node_->shape[i]; }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }

  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }

  T item() const {
    require(node_ && node_->value.size() == 1, ErrorCode::ShapeMismatch,
            "item() requires a scalar tensor");
    return node_->value[0];
  }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Reverse-mode sweep from this scalar. Topological order is built
  /// iteratively; recursion would overflow on deep graphs.
  void backward() {
    require(node_ && node_->value.size() == 1, ErrorCode::ShapeMismatch,
            "backward() starts from a scalar");
    std::vector<Node<T>*> order = topo_order(node_.get());
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_fn && n->requires_grad) {
        for (auto& p : n->parents)
          if (p->requires_grad) p->ensure_grad();
        n->backward_fn(*n);
      }
    }
  }

  std::shared_ptr<Node<T>>& node() { return node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  static std::vector<Node<T>*> topo_order(Node<T>* root) {
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> done;
    struct Item {
      Node<T>* n;
      size_t next_parent;
    };
    std::vector<Item> stack{{root, 0}};
    while (!stack.empty()) {
      Item& top = stack.back();
      if (done.count(top.n)) {
        stack.pop_back();
        continue;
      }
      if (top.next_parent < top.n->parents.size()) {
        Node<T>* p = top.n->parents[top.next_parent++].get();
        if (!done.count(p)) stack.push_back({p, 0});
      } else {
        done.insert(top.n);
        order.push_back(top.n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<Node<T>> node_;
};

/// Assemble an op result node. Parents whose values fed the forward pass
/// are retained; the op is differentiable iff any parent requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  require(value.size() == shape_numel(shape), ErrorCode::ShapeMismatch,
          "op produced a value of the wrong size");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (auto& p : parents) needs = needs || p.requires_grad();
  n->requires_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

}  // namespace bapn::nn
