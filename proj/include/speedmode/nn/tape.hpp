#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "speedmode/nn/tensor.hpp"

namespace speedmode::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
  bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// creation order is a topological order and backward() walks it in reverse.
///
/// Single-writer: one thread records and differentiates a tape.
template <typename T>
class Tape {
 public:
  /// Called during backward with the node's accumulated output gradient.
  /// Implementations add into tape.grad(input) for inputs that require it.
  using Backward = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Var leaf(Tensor<T> value, bool requires_grad = true);
  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op result. Non-finite values are rejected with NumericError.
  /// The backward closure is dropped when requires_grad is false.
  Var record(Tensor<T> value, bool requires_grad, Backward backward, const char* op = "op");

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  template <typename... Vs>
  bool any_requires_grad(Vs... vs) const {
    return (requires_grad(vs) || ...);
  }

  /// Gradient buffer for v, zero-initialized on first access.
  Tensor<T>& grad(Var v);
  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  /// Seeds d(root)/d(root) = 1 and runs every recorded backward closure
  /// that can reach root exactly once, newest first. root must hold a
  /// single element.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  /// Number of backward closures executed by the last backward().
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::deque<Node> nodes_;  // stable references across appends
  std::size_t backward_visits_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace speedmode::nn
