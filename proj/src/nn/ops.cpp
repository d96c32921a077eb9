#include "speedmode/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "speedmode/util.hpp"

namespace speedmode::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
using Stride = Eigen::OuterStride<>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Stride>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Stride>;

std::size_t last_dim(const Shape& s) {
  if (s.empty()) throw ShapeError("op requires rank >= 1");
  return s.back();
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var x, Var w) {
  const auto& xs = tape.shape(x);
  const auto& ws = tape.shape(w);
  if (ws.size() != 2 || last_dim(xs) != ws[0])
    throw ShapeError("matmul: " + shape_str(xs) + " x " + shape_str(ws));
  const std::size_t in = ws[0], out = ws[1], n = tape.value(x).size() / in;
  Shape ys = xs;
  ys.back() = out;
  Tensor<T> y(ys);
  MatMap<T>(y.data(), n, out).noalias() =
      ConstMatMap<T>(tape.value(x).data(), n, in) * ConstMatMap<T>(tape.value(w).data(), in, out);
  return tape.record(std::move(y), tape.any_requires_grad(x, w),
                     [x, w, n, in, out](Tape<T>& t, const Tensor<T>& g) {
                       ConstMatMap<T> G(g.data(), n, out);
                       if (t.requires_grad(x))
                         MatMap<T>(t.grad(x).data(), n, in).noalias() +=
                             G * ConstMatMap<T>(t.value(w).data(), in, out).transpose();
                       if (t.requires_grad(w))
                         MatMap<T>(t.grad(w).data(), in, out).noalias() +=
                             ConstMatMap<T>(t.value(x).data(), n, in).transpose() * G;
                     },
                     "matmul");
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.shape(a), tape.shape(b), "add");
  Tensor<T> y = tape.value(a);
  const auto& bv = tape.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.record(std::move(y), tape.any_requires_grad(a, b),
                     [a, b](Tape<T>& t, const Tensor<T>& g) {
                       for (Var v : {a, b}) {
                         if (!t.requires_grad(v)) continue;
                         auto& gv = t.grad(v);
                         for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
                       }
                     },
                     "add");
}

template <typename T>
Var add_broadcast(Tape<T>& tape, Var x, Var y) {
  const auto& xs = tape.shape(x);
  const auto& ys = tape.shape(y);
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin()))
    throw ShapeError("add_broadcast: " + shape_str(ys) + " does not tile " + shape_str(xs));
  const std::size_t m = tape.value(y).size();
  Tensor<T> out = tape.value(x);
  const auto& yv = tape.value(y);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i % m];
  return tape.record(std::move(out), tape.any_requires_grad(x, y),
                     [x, y, m](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(x)) {
                         auto& gx = t.grad(x);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (t.requires_grad(y)) {
                         auto& gy = t.grad(y);
                         for (std::size_t i = 0; i < g.size(); ++i) gy[i % m] += g[i];
                       }
                     },
                     "add_broadcast");
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, std::optional<Var> b) {
  Var y = matmul(tape, x, w);
  if (!b) return y;
  if (tape.shape(*b) != Shape{tape.shape(w)[1]})
    throw ShapeError("linear: bias " + shape_str(tape.shape(*b)) + " for weight " +
                     shape_str(tape.shape(w)));
  return add_broadcast(tape, y, *b);
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape.shape(a), tape.shape(b), "mul");
  Tensor<T> y = tape.value(a);
  const auto& bv = tape.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return tape.record(std::move(y), tape.any_requires_grad(a, b),
                     [a, b](Tape<T>& t, const Tensor<T>& g) {
                       const auto& av = t.value(a);
                       const auto& bv = t.value(b);
                       if (t.requires_grad(a)) {
                         auto& ga = t.grad(a);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                       }
                       if (t.requires_grad(b)) {
                         auto& gb = t.grad(b);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                       }
                     },
                     "mul");
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  return tape.record(std::move(y), tape.requires_grad(x),
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       const auto& xv = t.value(x);
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (xv[i] > T(0)) gx[i] += g[i];
                     },
                     "relu");
}

template <typename T>
Var swish(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.values()) v = v * sigmoid(v);
  return tape.record(std::move(y), tape.requires_grad(x),
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       const auto& xv = t.value(x);
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T s = sigmoid(xv[i]);
                         gx[i] += g[i] * (s + xv[i] * s * (T(1) - s));
                       }
                     },
                     "swish");
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape) {
  Tensor<T> y = tape.value(x);
  y.reshape(std::move(shape));
  return tape.record(std::move(y), tape.requires_grad(x),
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     },
                     "reshape");
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, double eps) {
  const auto& xs = tape.shape(x);
  const std::size_t d = last_dim(xs);
  if (d == 0) throw ShapeError("layer_norm: feature dimension is zero");
  if (tape.shape(gain) != Shape{d} || tape.shape(bias) != Shape{d})
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  const std::size_t rows = tape.value(x).size() / d;
  const auto& xv = tape.value(x);
  const auto& gv = tape.value(gain);
  const auto& bv = tape.value(bias);
  Tensor<T> y(xs);
  Tensor<T> xhat(xs);
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<T>(inv);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = static_cast<T>((row[j] - mean) * inv);
      xhat[r * d + j] = h;
      y[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const bool needs = tape.any_requires_grad(x, gain, bias);
  return tape.record(
      std::move(y), needs,
      [x, gain, bias, d, rows, xhat = needs ? std::move(xhat) : Tensor<T>(),
       inv_std = needs ? std::move(inv_std) : std::vector<T>()](Tape<T>& t, const Tensor<T>& g) {
        const auto& gv = t.value(gain);
        if (t.requires_grad(gain) || t.requires_grad(bias)) {
          std::vector<T> dg(d, T(0)), db(d, T(0));
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += g[r * d + j] * xhat[r * d + j];
              db[j] += g[r * d + j];
            }
          if (t.requires_grad(gain)) {
            auto& G = t.grad(gain);
            for (std::size_t j = 0; j < d; ++j) G[j] += dg[j];
          }
          if (t.requires_grad(bias)) {
            auto& B = t.grad(bias);
            for (std::size_t j = 0; j < d; ++j) B[j] += db[j];
          }
        }
        if (!t.requires_grad(x)) return;
        auto& gx = t.grad(x);
        const T invd = T(1) / static_cast<T>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + j];
          }
          mean_dh *= invd;
          mean_dh_h *= invd;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = g[r * d + j] * gv[j];
            gx[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      },
      "layer_norm");
}

template <typename T>
Var masked_softmax(Tape<T>& tape, Var scores, std::span<const std::uint8_t> mask) {
  const auto& s = tape.value(scores);
  const std::size_t n = last_dim(s.shape());
  if (mask.size() != s.size())
    throw ShapeError("masked_softmax: mask has " + std::to_string(mask.size()) +
                     " entries for " + std::to_string(s.size()) + " scores");
  const std::size_t rows = s.size() / n;
  Tensor<T> p(s.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = s.data() + r * n;
    const std::uint8_t* m = mask.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (m[j]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<T>::infinity())
      throw std::invalid_argument("masked_softmax: row " + std::to_string(r) + " fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const T e = m[j] ? std::exp(row[j] - mx) : T(0);
      p[r * n + j] = e;
      sum += e;
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (std::size_t j = 0; j < n; ++j) p[r * n + j] *= inv;
  }
  std::optional<Tensor<T>> saved;
  if (tape.requires_grad(scores)) saved = p;
  return tape.record(
      std::move(p), tape.requires_grad(scores),
      [scores, n, rows, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& g) {
        const auto& p = *saved;
        auto& gs = t.grad(scores);
        for (std::size_t r = 0; r < rows; ++r) {
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * p[r * n + j];
          for (std::size_t j = 0; j < n; ++j) gs[r * n + j] += p[r * n + j] * (g[r * n + j] - dot);
        }
      },
      "masked_softmax");
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const auto& xv = tape.value(x);
  Rng rng(seed);
  std::vector<T> scale(xv.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& s : scale) s = rng.uniform() >= rate ? keep_scale : T(0);
  Tensor<T> y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= scale[i];
  return tape.record(std::move(y), tape.requires_grad(x),
                     [x, scale = std::move(scale)](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * scale[i];
                     },
                     "dropout");
}

namespace {

// cos/sin tables [T, dk/2] for the rotary angles.
template <typename T>
void rope_tables(std::span<const double> positions, std::size_t dk, double base,
                 std::vector<T>& cos_t, std::vector<T>& sin_t) {
  const std::size_t half = dk / 2;
  cos_t.resize(positions.size() * half);
  sin_t.resize(positions.size() * half);
  for (std::size_t p = 0; p < positions.size(); ++p)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dk));
      const double angle = positions[p] * freq;
      cos_t[p * half + i] = static_cast<T>(std::cos(angle));
      sin_t[p * half + i] = static_cast<T>(std::sin(angle));
    }
}

// Rotates in place; sign = -1 applies the inverse rotation.
template <typename T>
void rope_rotate(T* data, std::size_t batch, std::size_t len, std::size_t heads, std::size_t dk,
                 const std::vector<T>& cos_t, const std::vector<T>& sin_t, T sign) {
  const std::size_t half = dk / 2;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < len; ++p) {
      const T* c = cos_t.data() + p * half;
      const T* s = sin_t.data() + p * half;
      for (std::size_t h = 0; h < heads; ++h) {
        T* v = data + ((b * len + p) * heads + h) * dk;
        for (std::size_t i = 0; i < half; ++i) {
          const T a = v[2 * i], bb = v[2 * i + 1];
          const T sn = sign * s[i];
          v[2 * i] = a * c[i] - bb * sn;
          v[2 * i + 1] = a * sn + bb * c[i];
        }
      }
    }
}

}  // namespace

template <typename T>
Var rope(Tape<T>& tape, Var x, std::size_t n_heads, std::span<const double> positions,
         double base) {
  const auto& xs = tape.shape(x);
  if (xs.size() != 3) throw ShapeError("rope: expected [B, T, heads*dk], got " + shape_str(xs));
  if (n_heads == 0 || xs[2] % n_heads != 0) throw ShapeError("rope: width not divisible by heads");
  const std::size_t dk = xs[2] / n_heads;
  if (dk % 2 != 0) throw std::invalid_argument("rope: head dimension must be even");
  if (positions.size() != xs[1]) throw ShapeError("rope: one position per time step required");
  std::vector<T> cos_t, sin_t;
  rope_tables<T>(positions, dk, base, cos_t, sin_t);
  Tensor<T> y = tape.value(x);
  rope_rotate(y.data(), xs[0], xs[1], n_heads, dk, cos_t, sin_t, T(1));
  return tape.record(
      std::move(y), tape.requires_grad(x),
      [x, xs, n_heads, dk, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](
          Tape<T>& t, const Tensor<T>& g) {
        Tensor<T> back = g;
        rope_rotate(back.data(), xs[0], xs[1], n_heads, dk, cos_t, sin_t, T(-1));
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
      },
      "rope");
}

template <typename T>
Var grouped_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t n_heads,
                      std::size_t n_kv_heads, std::span<const std::uint8_t> key_mask) {
  const auto& qs = tape.shape(q);
  if (qs.size() != 3) throw ShapeError("attention: q must be [B, T, h*dk]");
  if (n_heads == 0 || n_kv_heads == 0 || n_heads % n_kv_heads != 0)
    throw std::invalid_argument("attention: n_heads must be a positive multiple of n_kv_heads");
  const std::size_t B = qs[0], L = qs[1];
  if (qs[2] % n_heads != 0) throw ShapeError("attention: q width not divisible by heads");
  const std::size_t dk = qs[2] / n_heads;
  const Shape kv_shape{B, L, n_kv_heads * dk};
  if (tape.shape(k) != kv_shape || tape.shape(v) != kv_shape)
    throw ShapeError("attention: k/v must be " + shape_str(kv_shape));
  if (key_mask.size() != B * L) throw ShapeError("attention: key mask must be [B*T]");
  const std::size_t group = n_heads / n_kv_heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
  const std::size_t qstride = n_heads * dk, kvstride = n_kv_heads * dk;

  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t j = 0; j < L; ++j) any = any || key_mask[b * L + j];
    if (!any) throw std::invalid_argument("attention: batch row " + std::to_string(b) +
                                          " has no valid key");
  }

  const bool needs = tape.any_requires_grad(q, k, v);
  Tensor<T> out(qs);
  Tensor<T> probs = needs ? Tensor<T>({B, n_heads, L, L}) : Tensor<T>();
  RowMat<T> S(L, L);
  using RowArr = Eigen::Array<T, 1, Eigen::Dynamic>;
  RowArr keep(L), bias(L);
  const auto& qv = tape.value(q);
  const auto& kv = tape.value(k);
  const auto& vv = tape.value(v);
  for (std::size_t b = 0; b < B; ++b) {
    const std::uint8_t* m = key_mask.data() + b * L;
    for (std::size_t j = 0; j < L; ++j) {
      keep[j] = m[j] ? T(1) : T(0);
      bias[j] = m[j] ? T(0) : -std::numeric_limits<T>::infinity();
    }
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t g = h / group;
      ConstStridedMap<T> Q(qv.data() + b * L * qstride + h * dk, L, dk, Stride(qstride));
      ConstStridedMap<T> K(kv.data() + b * L * kvstride + g * dk, L, dk, Stride(kvstride));
      ConstStridedMap<T> V(vv.data() + b * L * kvstride + g * dk, L, dk, Stride(kvstride));
      S.noalias() = (Q * K.transpose()) * scale;
      // The -inf bias keeps masked keys out of the max; multiplying by keep
      // makes their weight exactly zero.
      S.array().rowwise() += bias;
      const auto mx = S.rowwise().maxCoeff().eval();
      S.array() = (S.array().colwise() - mx.array()).exp().rowwise() * keep;
      const auto sum = S.rowwise().sum().eval();
      S.array().colwise() /= sum.array();
      StridedMap<T>(out.data() + b * L * qstride + h * dk, L, dk, Stride(qstride)).noalias() = S * V;
      if (needs) MatMap<T>(probs.data() + (b * n_heads + h) * L * L, L, L) = S;
    }
  }

  return tape.record(
      std::move(out), needs,
      [q, k, v, B, L, dk, n_heads, group, scale, qstride, kvstride,
       probs = std::move(probs)](Tape<T>& t, const Tensor<T>& gout) {
        const auto& qv = t.value(q);
        const auto& kv = t.value(k);
        const auto& vv = t.value(v);
        T* gq = t.requires_grad(q) ? t.grad(q).data() : nullptr;
        T* gk = t.requires_grad(k) ? t.grad(k).data() : nullptr;
        T* gv = t.requires_grad(v) ? t.grad(v).data() : nullptr;
        RowMat<T> dP(L, L), dS(L, L);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t g = h / group;
            ConstMatMap<T> P(probs.data() + (b * n_heads + h) * L * L, L, L);
            ConstStridedMap<T> dO(gout.data() + b * L * qstride + h * dk, L, dk, Stride(qstride));
            ConstStridedMap<T> Q(qv.data() + b * L * qstride + h * dk, L, dk, Stride(qstride));
            ConstStridedMap<T> K(kv.data() + b * L * kvstride + g * dk, L, dk, Stride(kvstride));
            ConstStridedMap<T> V(vv.data() + b * L * kvstride + g * dk, L, dk, Stride(kvstride));
            if (gv)
              StridedMap<T>(gv + b * L * kvstride + g * dk, L, dk, Stride(kvstride)).noalias() +=
                  P.transpose() * dO;
            if (!gq && !gk) continue;
            dP.noalias() = dO * V.transpose();
            const auto rowdot = (dP.array() * P.array()).rowwise().sum().eval();
            dS = (P.array() * (dP.array().colwise() - rowdot)).matrix() * scale;
            if (gq)
              StridedMap<T>(gq + b * L * qstride + h * dk, L, dk, Stride(qstride)).noalias() +=
                  dS * K;
            if (gk)
              StridedMap<T>(gk + b * L * kvstride + g * dk, L, dk, Stride(kvstride)).noalias() +=
                  dS.transpose() * Q;
          }
      },
      "attention");
}

template <typename T>
Var gqa_attention(Tape<T>& tape, Var x, const AttentionWeights& w, std::size_t n_heads,
                  std::size_t n_kv_heads, std::span<const std::uint8_t> key_mask, bool use_rope,
                  double rope_base) {
  const auto& xs = tape.shape(x);
  if (xs.size() != 3) throw ShapeError("gqa_attention: x must be [B, T, d]");
  if (n_heads == 0 || n_kv_heads == 0 || n_heads % n_kv_heads != 0)
    throw std::invalid_argument("gqa_attention: n_heads must be a multiple of n_kv_heads");
  Var q = matmul(tape, x, w.wq);
  Var k = matmul(tape, x, w.wk);
  Var v = matmul(tape, x, w.wv);
  if (use_rope) {
    std::vector<double> positions(xs[1]);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<double>(i);
    q = rope(tape, q, n_heads, positions, rope_base);
    k = rope(tape, k, n_kv_heads, positions, rope_base);
  }
  Var a = grouped_attention(tape, q, k, v, n_heads, n_kv_heads, key_mask);
  return matmul(tape, a, w.wo);
}

template <typename T>
Var swiglu_ffn(Tape<T>& tape, Var x, Var w1, Var w2, Var w3) {
  if (tape.shape(w1) != tape.shape(w2)) throw ShapeError("swiglu_ffn: W1 and W2 differ in shape");
  Var a = matmul(tape, x, w1);
  Var gate = swish(tape, matmul(tape, x, w2));
  return matmul(tape, mul(tape, a, gate), w3);
}

template <typename T>
Var relu_ffn(Tape<T>& tape, Var x, Var w1, Var b1, Var w2, Var b2) {
  return linear(tape, relu(tape, linear(tape, x, w1, b1)), w2, b2);
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var weights, Var z) {
  const auto& ws = tape.shape(weights);
  const auto& zs = tape.shape(z);
  if (ws.size() != 2 || zs.size() != 3 || ws[0] != zs[0] || ws[1] != zs[1])
    throw ShapeError("weighted_sum: " + shape_str(ws) + " with " + shape_str(zs));
  const std::size_t B = zs[0], L = zs[1], d = zs[2];
  Tensor<T> c({B, d});
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(c.data() + b * d, d).noalias() =
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(tape.value(weights).data() + b * L,
                                                               L) *
        ConstMatMap<T>(tape.value(z).data() + b * L * d, L, d);
  }
  return tape.record(std::move(c), tape.any_requires_grad(weights, z),
                     [weights, z, B, L, d](Tape<T>& t, const Tensor<T>& g) {
                       for (std::size_t b = 0; b < B; ++b) {
                         Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> G(g.data() + b * d,
                                                                                  d);
                         if (t.requires_grad(weights))
                           Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(
                               t.grad(weights).data() + b * L, L)
                               .noalias() += ConstMatMap<T>(t.value(z).data() + b * L * d, L, d) * G;
                         if (t.requires_grad(z)) {
                           const T* w = t.value(weights).data() + b * L;
                           T* gz = t.grad(z).data() + b * L * d;
                           for (std::size_t i = 0; i < L; ++i)
                             for (std::size_t j = 0; j < d; ++j) gz[i * d + j] += w[i] * G[j];
                         }
                       }
                     },
                     "weighted_sum");
}

template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const auto& ls = tape.shape(logits);
  if (ls.size() != 2) throw ShapeError("cross_entropy: logits must be [B, C]");
  const std::size_t B = ls[0], C = ls[1];
  if (labels.size() != B) throw ShapeError("cross_entropy: one label per row required");
  if (B == 0) throw ShapeError("cross_entropy: empty batch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::invalid_argument("cross_entropy: invalid label ordinal " + std::to_string(y));
  const auto& lv = tape.value(logits);
  Tensor<T> probs({B, C});
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = lv.data() + b * C;
    double mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[labels[b]];
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] = static_cast<T>(std::exp(row[c] - lse));
  }
  std::vector<int> y(labels.begin(), labels.end());
  return tape.record(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(B))),
                     tape.requires_grad(logits),
                     [logits, B, C, probs = std::move(probs), y = std::move(y)](
                         Tape<T>& t, const Tensor<T>& g) {
                       auto& gl = t.grad(logits);
                       const T s = g[0] / static_cast<T>(B);
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t c = 0; c < C; ++c)
                           gl[b * C + c] +=
                               s * (probs[b * C + c] - (static_cast<int>(c) == y[b] ? T(1) : T(0)));
                     },
                     "cross_entropy");
}

template <typename T>
Var dot_constant(Tape<T>& tape, Var x, const Tensor<T>& r) {
  const auto& xv = tape.value(x);
  if (xv.size() != r.size()) throw ShapeError("dot_constant: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += static_cast<double>(xv[i]) * r[i];
  return tape.record(Tensor<T>::scalar(static_cast<T>(s)), tape.requires_grad(x),
                     [x, r](Tape<T>& t, const Tensor<T>& g) {
                       auto& gx = t.grad(x);
                       for (std::size_t i = 0; i < r.size(); ++i) gx[i] += g[0] * r[i];
                     },
                     "dot_constant");
}

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t length, std::size_t d) {
  Tensor<T> pe({length, d});
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i2 = j - (j % 2);  // 2i
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i2) / static_cast<double>(d));
      pe[pos * d + j] = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t n = last_dim(logits.shape());
  Tensor<T> p(logits.shape());
  for (std::size_t r = 0; r < logits.size() / n; ++r) {
    const T* row = logits.data() + r * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n; ++j) p[r * n + j] = static_cast<T>(std::exp(row[j] - mx) / sum);
  }
  return p;
}

#define SPEEDMODE_INSTANTIATE_OPS(T)                                                              \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                     \
  template Var add<T>(Tape<T>&, Var, Var);                                                        \
  template Var add_broadcast<T>(Tape<T>&, Var, Var);                                              \
  template Var linear<T>(Tape<T>&, Var, Var, std::optional<Var>);                                 \
  template Var mul<T>(Tape<T>&, Var, Var);                                                        \
  template Var relu<T>(Tape<T>&, Var);                                                            \
  template Var swish<T>(Tape<T>&, Var);                                                           \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                                  \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, double);                                    \
  template Var masked_softmax<T>(Tape<T>&, Var, std::span<const std::uint8_t>);                   \
  template Var dropout<T>(Tape<T>&, Var, double, bool, std::uint64_t);                            \
  template Var rope<T>(Tape<T>&, Var, std::size_t, std::span<const double>, double);              \
  template Var grouped_attention<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t,            \
                                    std::span<const std::uint8_t>);                               \
  template Var gqa_attention<T>(Tape<T>&, Var, const AttentionWeights&, std::size_t, std::size_t, \
                                std::span<const std::uint8_t>, bool, double);                     \
  template Var swiglu_ffn<T>(Tape<T>&, Var, Var, Var, Var);                                       \
  template Var relu_ffn<T>(Tape<T>&, Var, Var, Var, Var, Var);                                    \
  template Var weighted_sum<T>(Tape<T>&, Var, Var);                                               \
  template Var cross_entropy<T>(Tape<T>&, Var, std::span<const int>);                             \
  template Var dot_constant<T>(Tape<T>&, Var, const Tensor<T>&);                                  \
  template Tensor<T> sinusoidal_pe<T>(std::size_t, std::size_t);                                  \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);

SPEEDMODE_INSTANTIATE_OPS(float)
SPEEDMODE_INSTANTIATE_OPS(double)

}  // namespace speedmode::nn
