#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sgumlp/errors.hpp"

namespace sgumlp {

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// Dense row-major tensor over float or double. Every op below treats its
// inputs as immutable and returns a fresh tensor; a non-finite result is an
// error, never a value that propagates.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_size(shape_) != data_.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " holds " +
                           std::to_string(checked_size(shape_)) + " values, got " +
                           std::to_string(data_.size()));
    }
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return 0;
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) {
        throw DimensionError("tensor: extents must be positive, got " + shape_string(shape));
      }
      n *= e;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
inline void ensure_finite(const Tensor<T>& t, const char* op) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

template <typename T>
inline void require_rank(const Tensor<T>& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) +
                         ", got " + shape_string(t.shape()));
  }
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes differ: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace detail

// c[i,j] = sum_t a[i,t] * b[t,j]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.extent(1) != b.extent(0)) {
    throw DimensionError("matmul: inner extents disagree: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  const T* ap = a.data();
  const T* bp = b.data();
  T* cp = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = ap + i * k;
    T* crow = cp + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = arow[t];
      const T* brow = bp + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  detail::ensure_finite(c, "matmul");
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at2(j, i) = a.at2(i, j);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  detail::ensure_finite(out, "elementwise add");
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "elementwise mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  detail::ensure_finite(out, "elementwise mul");
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  detail::ensure_finite(out, "scale");
  return out;
}

// Accumulator update; only used for gradients, never for op outputs.
template <typename T>
void add_in_place(Tensor<T>& acc, const Tensor<T>& g) {
  detail::require_same_shape(acc, g, "accumulate");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

// mul backward: d(a*b) contributions for both factors.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> mul_backward(const Tensor<T>& a, const Tensor<T>& b,
                                             const Tensor<T>& g) {
  detail::require_same_shape(a, b, "mul backward");
  detail::require_same_shape(a, g, "mul backward");
  return {mul(g, b), mul(g, a)};
}

namespace detail {

// a^T * b with a [k x m], b [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.extent(0) != b.extent(0)) {
    throw DimensionError(std::string(op) + ": leading extents disagree: " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
  Tensor<T> out({m, n});
  for (std::size_t t = 0; t < k; ++t) {
    const T* arow = a.data() + t * m;
    const T* brow = b.data() + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  ensure_finite(out, op);
  return out;
}

// a * b^T with a [m x k], b [n x k] -> [m x n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.extent(1) != b.extent(1)) {
    throw DimensionError(std::string(op) + ": trailing extents disagree: " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    T* orow = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T acc = T(0);
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      orow[j] = acc;
    }
  }
  ensure_finite(out, op);
  return out;
}

}  // namespace detail

// dA = G * B^T, dB = A^T * G
template <typename T>
std::pair<Tensor<T>, Tensor<T>> matmul_backward(const Tensor<T>& a, const Tensor<T>& b,
                                                const Tensor<T>& g) {
  detail::require_rank(g, 2, "matmul backward");
  if (g.extent(0) != a.extent(0) || g.extent(1) != b.extent(1)) {
    throw DimensionError("matmul backward: cotangent " + shape_string(g.shape()) +
                         " does not match product of " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  return {detail::matmul_nt(g, b, "matmul backward"),
          detail::matmul_tn(a, g, "matmul backward")};
}

// Exact erf form: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T inv_sqrt2 = T(0.70710678118654752440L);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  detail::ensure_finite(out, "gelu");
  return out;
}

// d gelu / dx = Phi(x) + x * phi(x)
template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& g) {
  detail::require_same_shape(x, g, "gelu backward");
  Tensor<T> out(x.shape());
  const T inv_sqrt2 = T(0.70710678118654752440L);
  const T inv_sqrt2pi = T(0.39894228040143267794L);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
    out[i] = g[i] * (cdf + v * pdf);
  }
  detail::ensure_finite(out, "gelu backward");
  return out;
}

// Row-wise standardization over the feature axis, then affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps) {
  detail::require_rank(x, 2, "layer_norm");
  detail::require_rank(gain, 1, "layer_norm");
  detail::require_rank(bias, 1, "layer_norm");
  if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t s = x.extent(0), f = x.extent(1);
  if (gain.extent(0) != f || bias.extent(0) != f) {
    throw DimensionError("layer_norm: affine extents " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match feature axis of " +
                         shape_string(x.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < s; ++i) {
    const T* row = x.data() + i * f;
    T* orow = out.data() + i * f;
    T mean = T(0);
    for (std::size_t j = 0; j < f; ++j) mean += row[j];
    mean /= T(f);
    T var = T(0);
    for (std::size_t j = 0; j < f; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= T(f);
    const T inv_sigma = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < f; ++j) {
      orow[j] = gain[j] * ((row[j] - mean) * inv_sigma) + bias[j];
    }
  }
  detail::ensure_finite(out, "layer_norm");
  return out;
}

template <typename T>
struct LayerNormGrads {
  Tensor<T> dx;
  Tensor<T> dgain;
  Tensor<T> dbias;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain, T eps,
                                      const Tensor<T>& g) {
  detail::require_rank(x, 2, "layer_norm backward");
  detail::require_same_shape(x, g, "layer_norm backward");
  const std::size_t s = x.extent(0), f = x.extent(1);
  if (gain.rank() != 1 || gain.extent(0) != f) {
    throw DimensionError("layer_norm backward: gain " + shape_string(gain.shape()) +
                         " does not match feature axis of " + shape_string(x.shape()));
  }
  LayerNormGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>({f}), Tensor<T>({f})};
  std::vector<T> xhat(f);
  for (std::size_t i = 0; i < s; ++i) {
    const T* row = x.data() + i * f;
    const T* grow = g.data() + i * f;
    T* drow = grads.dx.data() + i * f;
    T mean = T(0);
    for (std::size_t j = 0; j < f; ++j) mean += row[j];
    mean /= T(f);
    T var = T(0);
    for (std::size_t j = 0; j < f; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= T(f);
    const T inv_sigma = T(1) / std::sqrt(var + eps);
    T ghat_mean = T(0), ghat_xhat_mean = T(0);
    for (std::size_t j = 0; j < f; ++j) {
      xhat[j] = (row[j] - mean) * inv_sigma;
      const T ghat = grow[j] * gain[j];
      ghat_mean += ghat;
      ghat_xhat_mean += ghat * xhat[j];
      grads.dgain[j] += grow[j] * xhat[j];
      grads.dbias[j] += grow[j];
    }
    ghat_mean /= T(f);
    ghat_xhat_mean /= T(f);
    for (std::size_t j = 0; j < f; ++j) {
      const T ghat = grow[j] * gain[j];
      drow[j] = (ghat - ghat_mean - xhat[j] * ghat_xhat_mean) * inv_sigma;
    }
  }
  detail::ensure_finite(grads.dx, "layer_norm backward");
  return grads;
}

// Last-axis softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) throw DimensionError("softmax: rank must be at least 1");
  const std::size_t c = x.extent(x.rank() - 1);
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = x.data() + i * c;
    T* orow = out.data() + i * c;
    T hi = row[0];
    for (std::size_t j = 1; j < c; ++j) hi = std::max(hi, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - hi);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= sum;
  }
  detail::ensure_finite(out, "softmax");
  return out;
}

// dx_i = p_i * (g_i - sum_j g_j p_j), taking the forward output p.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& g) {
  detail::require_same_shape(probs, g, "softmax backward");
  const std::size_t c = probs.extent(probs.rank() - 1);
  const std::size_t rows = probs.size() / c;
  Tensor<T> out(probs.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* p = probs.data() + i * c;
    const T* grow = g.data() + i * c;
    T* orow = out.data() + i * c;
    T dot = T(0);
    for (std::size_t j = 0; j < c; ++j) dot += grow[j] * p[j];
    for (std::size_t j = 0; j < c; ++j) orow[j] = p[j] * (grow[j] - dot);
  }
  detail::ensure_finite(out, "softmax backward");
  return out;
}

namespace detail {

template <typename T>
inline void check_depthwise_args(const Tensor<T>& x, const Tensor<T>& kernels,
                                 const Tensor<T>* bias) {
  require_rank(x, 3, "depthwise_conv2d");
  require_rank(kernels, 3, "depthwise_conv2d");
  const std::size_t k = kernels.extent(0);
  if (kernels.extent(1) != k) {
    throw DimensionError("depthwise_conv2d: kernels must be square, got " +
                         shape_string(kernels.shape()));
  }
  if (k % 2 == 0) {
    throw ConfigError("depthwise_conv2d: kernel extent must be odd, got " + std::to_string(k));
  }
  if (kernels.extent(2) != x.extent(2)) {
    throw DimensionError("depthwise_conv2d: input has " + std::to_string(x.extent(2)) +
                         " channels, kernels expect " + std::to_string(kernels.extent(2)));
  }
  if (bias && (bias->rank() != 1 || bias->extent(0) != x.extent(2))) {
    throw DimensionError("depthwise_conv2d: bias " + shape_string(bias->shape()) +
                         " does not match " + std::to_string(x.extent(2)) + " channels");
  }
}

}  // namespace detail

// Channel-preserving depthwise cross-correlation with zero "same" padding;
// output channel c depends only on input channel c.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernels,
                           const Tensor<T>& bias) {
  detail::check_depthwise_args(x, kernels, &bias);
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  const std::size_t k = kernels.extent(0);
  const std::ptrdiff_t r = std::ptrdiff_t(k) / 2;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      T* orow = out.data() + (i * w + j) * c;
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] = bias[ch];
      for (std::size_t u = 0; u < k; ++u) {
        const std::ptrdiff_t ii = std::ptrdiff_t(i) + std::ptrdiff_t(u) - r;
        if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
        for (std::size_t v = 0; v < k; ++v) {
          const std::ptrdiff_t jj = std::ptrdiff_t(j) + std::ptrdiff_t(v) - r;
          if (jj < 0 || jj >= std::ptrdiff_t(w)) continue;
          const T* xrow = x.data() + (std::size_t(ii) * w + std::size_t(jj)) * c;
          const T* krow = kernels.data() + (u * k + v) * c;
          for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += xrow[ch] * krow[ch];
        }
      }
    }
  }
  detail::ensure_finite(out, "depthwise_conv2d");
  return out;
}

template <typename T>
struct DepthwiseGrads {
  Tensor<T> dx;
  Tensor<T> dkernels;
  Tensor<T> dbias;
};

template <typename T>
DepthwiseGrads<T> depthwise_conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernels,
                                            const Tensor<T>& g) {
  detail::check_depthwise_args(x, kernels, static_cast<const Tensor<T>*>(nullptr));
  detail::require_same_shape(x, g, "depthwise_conv2d backward");
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  const std::size_t k = kernels.extent(0);
  const std::ptrdiff_t r = std::ptrdiff_t(k) / 2;
  DepthwiseGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(kernels.shape()), Tensor<T>({c})};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const T* grow = g.data() + (i * w + j) * c;
      for (std::size_t ch = 0; ch < c; ++ch) grads.dbias[ch] += grow[ch];
      for (std::size_t u = 0; u < k; ++u) {
        const std::ptrdiff_t ii = std::ptrdiff_t(i) + std::ptrdiff_t(u) - r;
        if (ii < 0 || ii >= std::ptrdiff_t(h)) continue;
        for (std::size_t v = 0; v < k; ++v) {
          const std::ptrdiff_t jj = std::ptrdiff_t(j) + std::ptrdiff_t(v) - r;
          if (jj < 0 || jj >= std::ptrdiff_t(w)) continue;
          const std::size_t src = (std::size_t(ii) * w + std::size_t(jj)) * c;
          const T* xrow = x.data() + src;
          const T* krow = kernels.data() + (u * k + v) * c;
          T* dkrow = grads.dkernels.data() + (u * k + v) * c;
          T* dxrow = grads.dx.data() + src;
          for (std::size_t ch = 0; ch < c; ++ch) {
            dkrow[ch] += grow[ch] * xrow[ch];
            dxrow[ch] += grow[ch] * krow[ch];
          }
        }
      }
    }
  }
  detail::ensure_finite(grads.dx, "depthwise_conv2d backward");
  return grads;
}

// Matrix plus a row-broadcast bias: out[i,j] = m[i,j] + bias[j].
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& m, const Tensor<T>& bias) {
  detail::require_rank(m, 2, "add_row_bias");
  detail::require_rank(bias, 1, "add_row_bias");
  if (bias.extent(0) != m.extent(1)) {
    throw DimensionError("add_row_bias: bias " + shape_string(bias.shape()) +
                         " does not match columns of " + shape_string(m.shape()));
  }
  Tensor<T> out(m.shape());
  const std::size_t s = m.extent(0), f = m.extent(1);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < f; ++j) out.at2(i, j) = m.at2(i, j) + bias[j];
  detail::ensure_finite(out, "add_row_bias");
  return out;
}

// Column sums of a 2-D cotangent; the bias backward of add_row_bias.
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& g) {
  detail::require_rank(g, 2, "sum_rows");
  Tensor<T> out({g.extent(1)});
  for (std::size_t i = 0; i < g.extent(0); ++i)
    for (std::size_t j = 0; j < g.extent(1); ++j) out[j] += g.at2(i, j);
  return out;
}

// Row sums; the bias backward of a per-row broadcast.
template <typename T>
Tensor<T> sum_cols(const Tensor<T>& g) {
  detail::require_rank(g, 2, "sum_cols");
  Tensor<T> out({g.extent(0)});
  for (std::size_t i = 0; i < g.extent(0); ++i)
    for (std::size_t j = 0; j < g.extent(1); ++j) out[i] += g.at2(i, j);
  return out;
}

// Value plus an additively accumulated cotangent of the same shape.
template <typename T>
struct Dual {
  Tensor<T> value;
  Tensor<T> grad;

  Dual() = default;
  explicit Dual(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

  void accumulate(const Tensor<T>& g) { add_in_place(grad, g); }
  void zero_grad() { grad.fill(T(0)); }
};

}  // namespace sgumlp
