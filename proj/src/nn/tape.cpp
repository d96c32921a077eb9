#include "speedmode/nn/tape.hpp"

#include <stdexcept>

namespace speedmode::nn {

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown variable");
  return nodes_[v.id];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("tape: unknown variable");
  return nodes_[v.id];
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("tape: non-finite leaf value");
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, bool requires_grad, Backward backward, const char* op) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
  if (!requires_grad) backward = nullptr;
  nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad(Var v) {
  auto& n = node(v);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
  auto& r = node(root);
  if (r.value.size() != 1) throw ShapeError("backward: root must be a scalar");
  for (auto& n : nodes_) n.grad = Tensor<T>();
  r.grad = Tensor<T>(r.value.shape(), T(1));
  backward_visits_ = 0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
    ++backward_visits_;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace speedmode::nn
