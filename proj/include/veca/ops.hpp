#pragma once

// Differentiable primitives. Every op views its inputs as a row-major
// matrix of `rows() x cols()` (last axis = columns). Broadcasting is limited
// to scalars and trailing-axis vectors (bias / gamma / beta).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "veca/rng.hpp"
#include "veca/tensor.hpp"

namespace veca {

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void require_rank2(const Tensor<T>& a, const char* op) {
  if (a.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// y = f(x) elementwise; df(x, y) gives dy/dx.
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    if (auto* g = grad_sink(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] += self.grad[i] * df(xv[i], self.value[i]);
    }
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = detail::grad_sink(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = detail::grad_sink(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = detail::grad_sink(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "div");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return detail::make_result<T>("div", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / bv[i];
    if (auto* g = detail::grad_sink(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i)
        (*g)[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>("scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary<T>("add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

/// x * s where s is a one-element tensor (e.g. a learned gain).
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) throw DimensionError("mul_scalar: expected one-element scale, got " + shape_str(s.shape()));
  const T sv = s[0];
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * sv;
  return detail::make_result<T>("mul_scalar", x.shape(), std::move(out), {x, s}, [](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const T sv = self.parents[1]->value[0];
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * sv;
    if (auto* g = detail::grad_sink(self, 1)) {
      T acc = 0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

/// x + b with b broadcast over every row (b has `x.cols()` entries).
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t n = x.cols(), m = x.rows();
  if (b.size() != n)
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] + b[c];
  return detail::make_result<T>("add_bias", x.shape(), std::move(out), {x, b}, [m, n](Node<T>& self) {
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = detail::grad_sink(self, 1))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[c] += self.grad[r * n + c];
  });
}

namespace detail {

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const T ait = a[i * k + t];
      const T* bt = b + t * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ait * bt[j];
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const auto& gc = self.grad;
    if (auto* ga = detail::grad_sink(self, 0)) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          T acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += gc[i * n + j] * bv[t * n + j];
          (*ga)[i * k + t] += acc;
        }
    }
    if (auto* gb = detail::grad_sink(self, 1)) {
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          const T ait = av[i * k + t];
          for (std::size_t j = 0; j < n; ++j) (*gb)[t * n + j] += ait * gc[i * n + j];
        }
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return detail::make_result<T>("transpose", {n, m}, std::move(out), {a}, [m, n](Node<T>& self) {
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += self.grad[j * m + i];
  });
}

/// x * W + b for x[rows x in], W[in x out], b[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {x}, [](Node<T>& self) {
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x, "slice_rows");
  const std::size_t n = x.dim(1);
  if (count == 0 || start + count > x.dim(0))
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
  std::vector<T> out(x.values().begin() + start * n, x.values().begin() + (start + count) * n);
  return detail::make_result<T>("slice_rows", {count, n}, std::move(out), {x},
                                [start, n](Node<T>& self) {
                                  if (auto* g = detail::grad_sink(self, 0))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      (*g)[start * n + i] += self.grad[i];
                                });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || start + count > n)
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(x.shape()));
  std::vector<T> out(m * count);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = x[r * n + start + c];
  return detail::make_result<T>("slice_cols", {m, count}, std::move(out), {x},
                                [m, n, start, count](Node<T>& self) {
                                  if (auto* g = detail::grad_sink(self, 0))
                                    for (std::size_t r = 0; r < m; ++r)
                                      for (std::size_t c = 0; c < count; ++c)
                                        (*g)[r * n + start + c] += self.grad[r * count + c];
                                });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_rows");
    if (p.dim(1) != n)
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    offsets.push_back(m * n);
    m += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return detail::make_result<T>("concat_rows", {m, n}, std::move(out), parts,
                                [offsets](Node<T>& self) {
                                  for (std::size_t k = 0; k < offsets.size(); ++k)
                                    if (auto* g = detail::grad_sink(self, k))
                                      for (std::size_t i = 0; i < g->size(); ++i)
                                        (*g)[i] += self.grad[offsets[k] + i];
                                });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> starts, widths;
  for (const auto& p : parts) {
    detail::require_rank2(p, "concat_cols");
    if (p.dim(0) != m)
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    starts.push_back(n);
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<T> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * n + starts[k] + c] = parts[k][r * widths[k] + c];
  return detail::make_result<T>("concat_cols", {m, n}, std::move(out), parts,
                                [m, n, starts, widths](Node<T>& self) {
                                  for (std::size_t k = 0; k < starts.size(); ++k)
                                    if (auto* g = detail::grad_sink(self, k))
                                      for (std::size_t r = 0; r < m; ++r)
                                        for (std::size_t c = 0; c < widths[k]; ++c)
                                          (*g)[r * widths[k] + c] += self.grad[r * n + starts[k] + c];
                                });
}

/// Row-wise softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* in = x.data().data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T sum = 0;
    for (std::size_t c = 0; c < n; ++c) sum += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < n; ++c) o[c] /= sum;
  }
  return detail::make_result<T>("softmax_rows", x.shape(), std::move(out), {x}, [m, n](Node<T>& self) {
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t r = 0; r < m; ++r) {
        const T* y = self.value.data() + r * n;
        const T* gy = self.grad.data() + r * n;
        T dot = 0;
        for (std::size_t c = 0; c < n; ++c) dot += y[c] * gy[c];
        for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += y[c] * (gy[c] - dot);
      }
  });
}

/// Per-row normalization to zero mean / unit variance, then gamma * . + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n)
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " vs input " + shape_str(x.shape()));
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  std::vector<T> out(x.size()), xhat(x.size()), rstd(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* in = x.data().data() + r * n;
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += in[c];
    mean /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= T(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (in[c] - mean) * rstd[r];
      out[r * n + c] = xhat[r * n + c] * gamma[c] + beta[c];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const auto& gv = self.parents[1]->value;
        const auto& gy = self.grad;
        if (auto* gx = detail::grad_sink(self, 0))
          for (std::size_t r = 0; r < m; ++r) {
            T sum_d = 0, sum_dx = 0;
            for (std::size_t c = 0; c < n; ++c) {
              const T d = gy[r * n + c] * gv[c];
              sum_d += d;
              sum_dx += d * xhat[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const T d = gy[r * n + c] * gv[c];
              (*gx)[r * n + c] += rstd[r] * (d - sum_d / T(n) - xhat[r * n + c] * sum_dx / T(n));
            }
          }
        if (auto* gg = detail::grad_sink(self, 1))
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) (*gg)[c] += gy[r * n + c] * xhat[r * n + c];
        if (auto* gb = detail::grad_sink(self, 2))
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) (*gb)[c] += gy[r * n + c];
      });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary<T>(
      "silu", x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& x) {
  return detail::unary<T>("cos", x, [](T v) { return std::cos(v); }, [](T v, T) { return -std::sin(v); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary<T>("sin", x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>("square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// max(x, lo) elementwise; gradient passes only where x > lo.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return detail::unary<T>("clamp_min", x, [lo](T v) { return v > lo ? v : lo; },
                          [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::make_result<T>("sum", {1}, {acc}, {x}, [](Node<T>& self) {
    if (auto* g = detail::grad_sink(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.size()));
}

/// Per-row inner product: out[r] = <a_r, b_r>.
template <typename T>
Tensor<T> row_dot(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "row_dot");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m, T(0));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r] += a[r * n + c] * b[r * n + c];
  return detail::make_result<T>("row_dot", {m}, std::move(out), {a, b}, [m, n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[r] * bv[r * n + c];
    if (auto* g = detail::grad_sink(self, 1))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[r] * av[r * n + c];
  });
}

/// Per-row Euclidean norm. The gradient at a zero row is taken as zero.
template <typename T>
Tensor<T> row_norm(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(m, T(0));
  for (std::size_t r = 0; r < m; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < n; ++c) s += x[r * n + c] * x[r * n + c];
    out[r] = std::sqrt(s);
  }
  return detail::make_result<T>("row_norm", {m}, std::move(out), {x}, [m, n](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    if (auto* g = detail::grad_sink(self, 0))
      for (std::size_t r = 0; r < m; ++r) {
        if (self.value[r] == T(0)) continue;
        const T k = self.grad[r] / self.value[r];
        for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += k * xv[r * n + c];
      }
  });
}

/// Inverted dropout with an explicit stream; identity when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout: probability must be < 1");
  std::vector<T> mask(x.size());
  const T keep = T(1) / T(1.0 - p);
  for (auto& v : mask) v = rng.uniform() < p ? T(0) : keep;
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

}  // namespace veca
