#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "speedmode/nn/tape.hpp"

// Differentiable primitives. Every op records its result on the tape with
// an analytic backward. Leading dimensions are flattened where noted, so
// [B, T, d] activations and [N, d] matrices share the same kernels.
namespace speedmode::nn {

/// y = x W for x [..., in], W [in, out].
template <typename T>
Var matmul(Tape<T>& tape, Var x, Var w);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

/// x + y where y's shape matches x's trailing dimensions (bias rows,
/// positional tables).
template <typename T>
Var add_broadcast(Tape<T>& tape, Var x, Var y);

/// x W (+ b).
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> b = std::nullopt);

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var relu(Tape<T>& tape, Var x);

/// z * sigmoid(z).
template <typename T>
Var swish(Tape<T>& tape, Var x);

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape);

/// Normalizes over the last axis, then applies gain and bias.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, double eps = 1e-5);

/// Softmax over the last axis. mask holds one flag per element of scores
/// (non-zero = valid); masked entries get exactly zero weight. A row with
/// no valid entry is an error.
template <typename T>
Var masked_softmax(Tape<T>& tape, Var scores, std::span<const std::uint8_t> mask);

/// Inverted dropout. Identity when !training or rate == 0.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, bool training, std::uint64_t seed);

inline constexpr double kRopeBase = 10000.0;

/// Rotary embedding over x [B, T, heads * head_dim]: within each head the
/// pair (2i, 2i+1) at position p is rotated by p * base^(-2i/head_dim).
/// positions has one entry per time step.
template <typename T>
Var rope(Tape<T>& tape, Var x, std::size_t n_heads, std::span<const double> positions,
         double base = kRopeBase);

/// Scaled dot-product attention with grouped key/value heads.
/// q [B, T, h*dk], k and v [B, T, h_kv*dk]; query head j reads kv head
/// j / (h / h_kv). key_mask is [B*T]; masked keys get zero weight.
template <typename T>
Var grouped_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t n_heads,
                      std::size_t n_kv_heads, std::span<const std::uint8_t> key_mask);

struct AttentionWeights {
  Var wq, wk, wv, wo;  // [d, h*dk], [d, h_kv*dk], [d, h_kv*dk], [h*dk, d]
};

/// Project, optionally rotate, attend, project back.
template <typename T>
Var gqa_attention(Tape<T>& tape, Var x, const AttentionWeights& w, std::size_t n_heads,
                  std::size_t n_kv_heads, std::span<const std::uint8_t> key_mask, bool use_rope,
                  double rope_base = kRopeBase);

/// ((x W1) * swish(x W2)) W3, no biases.
template <typename T>
Var swiglu_ffn(Tape<T>& tape, Var x, Var w1, Var w2, Var w3);

/// max(0, x W1 + b1) W2 + b2.
template <typename T>
Var relu_ffn(Tape<T>& tape, Var x, Var w1, Var b1, Var w2, Var b2);

/// c[b] = sum_t weights[b, t] * z[b, t, :]   (weights [B, T], z [B, T, d]).
template <typename T>
Var weighted_sum(Tape<T>& tape, Var weights, Var z);

/// Mean negative log-likelihood of labels under softmax(logits [B, C]).
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels);

/// sum(x * r): reduces any output to a scalar for gradient checks.
template <typename T>
Var dot_constant(Tape<T>& tape, Var x, const Tensor<T>& r);

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same).
template <typename T>
Tensor<T> sinusoidal_pe(std::size_t length, std::size_t d);

/// Row-wise softmax over the last axis of a plain tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

}  // namespace speedmode::nn
