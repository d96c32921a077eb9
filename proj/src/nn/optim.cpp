#include "speedmode/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "speedmode/error.hpp"

namespace speedmode::nn {

template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamState& state,
                const AdamWConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: params/grads size mismatch");
  for (T g : grads)
    if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state does not match parameter size");
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double decay = 1.0 - config.lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.m[i];
    double& v = state.v[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    double p = static_cast<double>(params[i]) * decay;
    p -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    params[i] = static_cast<T>(p);
  }
}

template <typename T>
double global_norm(std::span<const std::span<T>> grads) {
  double sq = 0.0;
  for (auto g : grads)
    for (T x : g) sq += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sq);
}

template <typename T>
double clip_gradients(std::span<const std::span<T>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("clip_gradients: non-finite gradient norm");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto g : grads)
      for (T& x : g) x = static_cast<T>(x * s);
  }
  return norm;
}

template void adamw_step<float>(std::span<float>, std::span<const float>, AdamState&,
                                const AdamWConfig&);
template void adamw_step<double>(std::span<double>, std::span<const double>, AdamState&,
                                 const AdamWConfig&);
template double global_norm<float>(std::span<const std::span<float>>);
template double global_norm<double>(std::span<const std::span<double>>);
template double clip_gradients<float>(std::span<const std::span<float>>, double);
template double clip_gradients<double>(std::span<const std::span<double>>, double);

}  // namespace speedmode::nn
