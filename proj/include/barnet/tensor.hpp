#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "barnet/errors.hpp"

namespace barnet {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline Index element_count(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    n *= e;
  }
  return n;
}

/// Plain row-major storage: a shape plus an Eigen column of values. No graph.
template <typename T>
struct Dense {
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Shape shape;
  Storage data;

  Dense() = default;
  explicit Dense(Shape s) : shape(std::move(s)), data(Storage::Zero(element_count(shape))) {}
  Dense(Shape s, Storage values) : shape(std::move(s)), data(std::move(values)) {
    if (element_count(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                           to_string(shape));
  }

  static Dense constant(Shape s, T v) {
    Dense d(std::move(s));
    d.data.setConstant(v);
    return d;
  }

  static Dense from(Shape s, std::initializer_list<T> values) {
    Storage st(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), st.data());
    return Dense(std::move(s), std::move(st));
  }

  bool empty() const { return data.size() == 0; }
  Index numel() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(std::size_t i) const { return shape.at(i); }

  T& operator[](Index i) { return data[i]; }
  T operator[](Index i) const { return data[i]; }

  T& at(Index c, Index y, Index x) { return data[(c * shape[1] + y) * shape[2] + x]; }
  T at(Index c, Index y, Index x) const { return data[(c * shape[1] + y) * shape[2] + x]; }

  MatrixMap as_matrix(Index rows, Index cols) {
    if (rows * cols != numel()) throw DimensionError("cannot view " + to_string(shape) + " as a matrix");
    return MatrixMap(data.data(), rows, cols);
  }
  ConstMatrixMap as_matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) throw DimensionError("cannot view " + to_string(shape) + " as a matrix");
    return ConstMatrixMap(data.data(), rows, cols);
  }

  template <typename U>
  Dense<U> cast() const {
    return Dense<U>(shape, data.template cast<U>());
  }
};

namespace detail {

inline std::atomic<std::uint64_t>& sequence_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// One executed op (or a leaf). `seq` is the global creation order, so any
/// input of a node has a strictly smaller seq than the node itself.
template <typename T>
struct Node {
  Dense<T> value;
  Dense<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Dense<T>& grad_buffer() {
    if (grad.empty()) grad = Dense<T>(value.shape);
    return grad;
  }
  bool is_leaf() const { return !backward; }
};

/// Reverse-mode differentiable tensor handle. Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(Dense<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->seq = detail::sequence_counter().fetch_add(1);
  }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) { return Tensor(Dense<T>(std::move(s)), requires_grad); }
  static Tensor constant(Shape s, T v) { return Tensor(Dense<T>::constant(std::move(s), v)); }
  static Tensor from(Shape s, std::initializer_list<T> values, bool requires_grad = false) {
    return Tensor(Dense<T>::from(std::move(s), values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->value.shape; }
  Index dim(std::size_t i) const { return node_->value.dim(i); }
  Index rank() const { return node_->value.rank(); }
  Index numel() const { return node_->value.numel(); }

  const Dense<T>& value() const { return node_->value; }
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  Dense<T>& mutable_value() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Dense<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Dense<T>(); }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value.data[0];
  }

  /// Detached deep copy with the same requires_grad flag.
  Tensor clone() const { return Tensor(node_->value, node_->requires_grad); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// The recorded ops reachable from a root, in topological (creation) order.
template <typename T>
struct Graph {
  std::vector<Node<T>*> ops;

  static Graph collect(Node<T>& root) {
    Graph g;
    std::unordered_set<Node<T>*> seen;
    std::vector<Node<T>*> stack{&root};
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || !seen.insert(n).second) continue;
      g.ops.push_back(n);
      for (auto& in : n->inputs) stack.push_back(in.get());
    }
    std::sort(g.ops.begin(), g.ops.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });
    return g;
  }

  /// Seeds the root gradient with ones and runs every op's backward exactly
  /// once, newest first. Leaves accumulate; interior grads are rebuilt.
  void run_backward(Node<T>& root) {
    for (Node<T>* n : ops)
      if (!n->is_leaf()) n->grad = Dense<T>();
    root.grad_buffer().data.setOnes();
    for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
      Node<T>* n = *it;
      if (!n->is_leaf() && !n->grad.empty()) n->backward(*n);
    }
  }
};

template <typename T>
void Tensor<T>::backward() const {
  if (!node_->requires_grad) throw DimensionError("backward() on a tensor that does not require grad");
  Graph<T> g = Graph<T>::collect(*node_);
  g.run_backward(*node_);
}

namespace detail {

template <typename T>
void check_finite(const char* op, const Dense<T>& value) {
  if (value.data.allFinite()) return;
  Index bad = 0;
  while (bad < value.numel() && std::isfinite(static_cast<double>(value.data[bad]))) ++bad;
  throw NumericError(std::string(op) + " produced a non-finite value at element " + std::to_string(bad) +
                     " of " + to_string(value.shape));
}

}  // namespace detail

/// Wraps a freshly computed forward value as an op output. The backward
/// closure receives the output node; its grad is populated and its inputs are
/// in `self.inputs` in the order given here.
template <typename T, typename Backward>
Tensor<T> record(const char* op, Dense<T> value, std::vector<Tensor<T>> inputs, Backward&& backward) {
  detail::check_finite(op, value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return Tensor<T>(std::move(value));

  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
  node->backward = std::forward<Backward>(backward);
  node->seq = detail::sequence_counter().fetch_add(1);
  return Tensor<T>(std::move(node));
}

/// Gradient buffer of input `i` if it participates in differentiation, else null.
template <typename T>
Dense<T>* input_grad(Node<T>& self, std::size_t i) {
  Node<T>& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

}  // namespace barnet
