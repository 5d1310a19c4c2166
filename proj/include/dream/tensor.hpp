#pragma once

// Reverse-mode differentiable rank-2 tensors over Eigen row-major matrices.
//
// A Tensor is a shared handle to a graph node. Operations (see ops.hpp) record
// their inputs and a backward closure while gradient recording is enabled;
// backward() walks the recorded graph once in reverse topological order and
// accumulates gradients into every node that requires them.

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dream {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
inline thread_local bool grad_recording = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_recording; }

/// Disables graph recording for the lifetime of the guard (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Matrix<Scalar>&)> backward_fn;

  Matrix<Scalar>& grad_buffer() {
    if (!has_grad) {
      grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
      has_grad = true;
    }
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using Mat = Matrix<Scalar>;
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Tensor() = default;

  explicit Tensor(Mat value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Index rows, Index cols) { return Tensor(Mat::Zero(rows, cols)); }
  static Tensor scalar(Scalar v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const { return node_->value; }
  // Only parameters are written in place, and only between graph evaluations.
  Mat& mutable_value() { return node_->value; }

  /// Accumulated gradient; a zero matrix when nothing reached this node.
  const Mat& grad() const { return node_->grad_buffer(); }
  Mat& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->has_grad; }
  void zero_grad() {
    if (node_->has_grad) node_->grad.setZero();
  }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  bool requires_grad() const { return node_->requires_grad; }

  Scalar item() const {
    if (size() != 1) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
    return node_->value(0, 0);
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Records an operation result. `fn` receives the output gradient and must
/// accumulate into the parents it captured.
template <typename Scalar, typename Fn>
Tensor<Scalar> make_op(Matrix<Scalar> value, const std::vector<const Tensor<Scalar>*>& inputs, Fn&& fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto* t : inputs) node->parents.push_back(t->node());
      node->backward_fn = std::forward<Fn>(fn);
    }
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a 1x1 scalar tensor");
  }
  if (!loss.requires_grad()) return;

  using NodeT = Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()(0, 0) += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward_fn && node->has_grad) node->backward_fn(node->grad);
  }
  // Intermediate closures hold activations; a graph is differentiated once.
  for (NodeT* node : order) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }
}

}  // namespace dream
