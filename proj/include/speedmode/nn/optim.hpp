#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace speedmode::nn {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Moments for one parameter array. Kept in double regardless of the
/// parameter type.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
/// State is sized lazily on the first call. Throws NumericError on a
/// non-finite gradient before touching params or state.
template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamState& state,
                const AdamWConfig& config);

/// Global L2 norm over all arrays, accumulated in double.
template <typename T>
double global_norm(std::span<const std::span<T>> grads);

/// Scales every array by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
template <typename T>
double clip_gradients(std::span<const std::span<T>> grads, double max_norm);

}  // namespace speedmode::nn
