#pragma once

// Dense tensors with a recorded reverse-mode graph.
//
// A Tensor is a shared handle to a Node. Every differentiable op produces a
// new Node holding its inputs and a backward rule; backward() walks the nodes
// reachable from a scalar loss in reverse topological order and accumulates
// gradients into every node that requires them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sfafnet/errors.hpp"

namespace sfafnet {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Long op chains would otherwise recurse once per node on destruction.
  ~Node() {
    std::vector<std::shared_ptr<Node>> pending = std::move(inputs);
    while (!pending.empty()) {
      std::shared_ptr<Node> n = std::move(pending.back());
      pending.pop_back();
      if (n && n.use_count() == 1) {
        for (auto& in : n->inputs) pending.push_back(std::move(in));
        n->inputs.clear();
      }
    }
  }

  bool is_leaf() const { return !static_cast<bool>(backward_fn); }

  T* grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }

  /// Gradient buffer of input i, or nullptr when that input takes no gradient.
  T* input_grad(std::size_t i) {
    Node& in = *inputs[i];
    return in.requires_grad ? in.grad_data() : nullptr;
  }

  const T* input_value(std::size_t i) const { return inputs[i]->value.data(); }
  const Shape& input_shape(std::size_t i) const { return inputs[i]->shape; }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<Index>(values.size())) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    for (Index d : shape) {
      if (d < 0) throw DimensionError("tensor: negative dimension in " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const Index n = shape_numel(shape);
    return from_vector(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                       requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_vector({}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  int rank() const { return static_cast<int>(shape().size()); }
  Index numel() const { return static_cast<Index>(node().value.size()); }

  Index dim(int axis) const {
    const int r = rank();
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " +
                           shape_str(shape()));
    }
    return shape()[static_cast<std::size_t>(a)];
  }

  std::span<const T> data() const { return node().value; }
  std::span<T> mutable_data() { return node().value; }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().grad; }
  bool has_grad() const { return !node().grad.empty(); }

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!is_leaf()) throw ContractError("tensor: requires_grad can only be set on leaves");
    node().requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return node().is_leaf(); }
  void zero_grad() { node().grad.clear(); }

  T item() const {
    if (numel() != 1) throw ContractError("tensor: item() on " + shape_str(shape()));
    return node().value[0];
  }

  /// Element access by full multi-index (row-major).
  T at(std::initializer_list<Index> idx) const { return node().value[offset(idx)]; }

  /// New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const { return from_vector(shape(), node().value, false); }

  bool all_finite() const {
    return std::all_of(node().value.begin(), node().value.end(),
                       [](T v) { return std::isfinite(v); });
  }

  /// Populate dLoss/dLeaf on every reachable leaf that requires gradients.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward() const {
    if (!defined() || numel() != 1) {
      throw ContractError("backward: loss must be a scalar, got " +
                          (defined() ? shape_str(shape()) : std::string("undefined")));
    }
    if (!requires_grad()) {
      throw ContractError("backward: loss does not depend on any tensor requiring grad");
    }
    std::vector<detail::Node<T>*> order = topological_order();
    for (auto* n : order) {
      if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    }
    node().grad_data()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (!n->is_leaf()) n->backward_fn(*n);
    }
  }

  detail::Node<T>& node() const {
    if (!node_) throw ContractError("tensor: use of undefined tensor");
    return *node_;
  }
  const NodePtr& node_ptr() const { return node_; }

 private:
  std::size_t offset(std::initializer_list<Index> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw DimensionError("tensor: index rank mismatch");
    Index off = 0;
    std::size_t d = 0;
    for (Index i : idx) {
      if (i < 0 || i >= s[d]) throw DimensionError("tensor: index out of range");
      off = off * s[d] + i;
      ++d;
    }
    return static_cast<std::size_t>(off);
  }

  // Post-order DFS over nodes that require grad; inputs precede consumers.
  std::vector<detail::Node<T>*> topological_order() const {
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> visited;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        detail::Node<T>* child = n->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  NodePtr node_;
};

namespace detail {

/// Wrap a computed value as a graph node. The backward rule and the inputs are
/// only retained when recording is on and some input requires gradients.
template <typename T, typename Backward>
Tensor<T> record(const char* op, Shape shape, std::vector<T> value,
                 std::vector<std::shared_ptr<Node<T>>> inputs, Backward&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  const bool needs = grad_mode() && std::any_of(inputs.begin(), inputs.end(), [](const auto& in) {
                       return in->requires_grad;
                     });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::forward<Backward>(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

}  // namespace sfafnet
