#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include "veca/ops.hpp"

namespace veca {

/// 2D axial rotary encoding over coordinates in [-1, 1]^2.
///
/// A head of width `head_dim` has head_dim/2 rotation pairs (2p, 2p+1). The
/// first head_dim/4 pairs rotate by x * freq_j * pi, the remaining ones by
/// y * freq_j * pi, with freq_j = base^(-j / num_freqs).
struct RopeSpec {
  std::size_t head_dim = 0;
  double base = 100.0;

  RopeSpec() = default;
  RopeSpec(std::size_t head_dim_, double base_ = 100.0) : head_dim(head_dim_), base(base_) {
    if (head_dim == 0 || head_dim % 4 != 0)
      throw ConfigError("rope: head_dim must be a positive multiple of 4, got " + std::to_string(head_dim));
    if (!(base > 0.0)) throw ConfigError("rope: base must be positive");
  }

  std::size_t num_freqs() const { return head_dim / 4; }
  std::size_t num_pairs() const { return head_dim / 2; }

  std::vector<double> freqs() const {
    std::vector<double> f(num_freqs());
    for (std::size_t j = 0; j < f.size(); ++j)
      f[j] = std::pow(base, -static_cast<double>(j) / static_cast<double>(num_freqs()));
    return f;
  }
};

/// Cell-centre coordinates of an hp x wp patch grid, row-major, as (x, y).
template <typename T>
Tensor<T> patch_grid(std::size_t hp, std::size_t wp) {
  if (hp == 0 || wp == 0) throw DimensionError("patch_grid: grid extents must be positive");
  std::vector<T> out;
  out.reserve(hp * wp * 2);
  for (std::size_t r = 0; r < hp; ++r)
    for (std::size_t c = 0; c < wp; ++c) {
      // (c + 0.5) / wp * 2 - 1 with an exact integer numerator, so mirrored
      // columns give exactly negated x.
      out.push_back(T(2.0 * double(c) + 1.0 - double(wp)) / T(wp));
      out.push_back(T(2.0 * double(r) + 1.0 - double(hp)) / T(hp));
    }
  return Tensor<T>({hp * wp, 2}, std::move(out));
}

/// Angle tables for each token; differentiable with respect to `coords`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cos_sin(const RopeSpec& spec, const Tensor<T>& coords) {
  if (coords.rank() != 2 || coords.dim(1) != 2)
    throw DimensionError("cos_sin: coords must be [T x 2], got " + shape_str(coords.shape()));
  const std::size_t nf = spec.num_freqs(), np = spec.num_pairs();
  std::vector<T> proj(2 * np, T(0));
  const auto f = spec.freqs();
  for (std::size_t j = 0; j < nf; ++j) {
    proj[j] = T(f[j] * std::numbers::pi);            // x row
    proj[np + nf + j] = T(f[j] * std::numbers::pi);  // y row
  }
  Tensor<T> angles = matmul(coords, Tensor<T>({2, np}, std::move(proj)));
  return {cos(angles), sin(angles)};
}

/// Rotates each pair (a, b) of every row of x[T x head_dim] by the row's angle.
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, const Tensor<T>& cos_t, const Tensor<T>& sin_t) {
  detail::require_rank2(x, "rope_apply");
  const std::size_t rows = x.dim(0), hd = x.dim(1), np = hd / 2;
  if (hd % 2 != 0 || cos_t.shape() != Shape{rows, np} || sin_t.shape() != Shape{rows, np})
    throw DimensionError("rope_apply: input " + shape_str(x.shape()) + " vs tables " +
                         shape_str(cos_t.shape()) + "/" + shape_str(sin_t.shape()));
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < np; ++p) {
      const T a = x[r * hd + 2 * p], b = x[r * hd + 2 * p + 1];
      const T c = cos_t[r * np + p], s = sin_t[r * np + p];
      out[r * hd + 2 * p] = a * c - b * s;
      out[r * hd + 2 * p + 1] = a * s + b * c;
    }
  return detail::make_result<T>(
      "rope_apply", x.shape(), std::move(out), {x, cos_t, sin_t}, [rows, hd, np](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& cv = self.parents[1]->value;
        const auto& sv = self.parents[2]->value;
        auto* gx = detail::grad_sink(self, 0);
        auto* gc = detail::grad_sink(self, 1);
        auto* gs = detail::grad_sink(self, 2);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t p = 0; p < np; ++p) {
            const std::size_t i0 = r * hd + 2 * p, i1 = i0 + 1, t = r * np + p;
            const T g0 = self.grad[i0], g1 = self.grad[i1];
            const T a = xv[i0], b = xv[i1], c = cv[t], s = sv[t];
            if (gx) {
              (*gx)[i0] += g0 * c + g1 * s;
              (*gx)[i1] += -g0 * s + g1 * c;
            }
            if (gc) (*gc)[t] += g0 * a + g1 * b;
            if (gs) (*gs)[t] += -g0 * b + g1 * a;
          }
      });
}

namespace detail {
inline double fps_lattice(std::size_t i, std::size_t side) {
  if (side == 1) return 0.0;
  return (2.0 * static_cast<double>(i) - static_cast<double>(side - 1)) / static_cast<double>(side - 1);
}
}  // namespace detail

/// Farthest-point sample of `m` points from a side x side lattice spanning
/// [-1, 1]^2, returned as (x, y) rows in selection order.
///
/// The seed is the lattice point closest to the origin; every tie (seed or
/// farthest point) goes to the lowest row-major index. Distances are compared
/// exactly in integer lattice units.
inline std::vector<std::pair<double, double>> fps_points(std::size_t m, std::size_t side) {
  const std::size_t n = side * side;
  if (m == 0) throw CapacityError("fps: need at least one point");
  if (m > n)
    throw CapacityError("fps: cannot pick " + std::to_string(m) + " points from a " +
                        std::to_string(side) + "x" + std::to_string(side) + " lattice");
  // Lattice unit u = 2i - (side - 1), so the coordinate is u / (side - 1).
  auto unit = [side](std::size_t i) { return 2 * static_cast<std::int64_t>(i) - static_cast<std::int64_t>(side - 1); };
  auto d2 = [&](std::size_t a, std::size_t b) {
    const std::int64_t dx = unit(a % side) - unit(b % side), dy = unit(a / side) - unit(b / side);
    return dx * dx + dy * dy;
  };
  auto pt = [side](std::size_t idx) {
    return std::pair{detail::fps_lattice(idx % side, side), detail::fps_lattice(idx / side, side)};
  };
  std::size_t seed = 0;
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t d = unit(i % side) * unit(i % side) + unit(i / side) * unit(i / side);
    if (d < best) {
      best = d;
      seed = i;
    }
  }
  std::vector<std::pair<double, double>> chosen{pt(seed)};
  std::vector<std::int64_t> min_d2(n);
  for (std::size_t i = 0; i < n; ++i) min_d2[i] = d2(i, seed);
  while (chosen.size() < m) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (min_d2[i] > min_d2[arg]) arg = i;
    chosen.push_back(pt(arg));
    for (std::size_t i = 0; i < n; ++i) min_d2[i] = std::min(min_d2[i], d2(i, arg));
  }
  return chosen;
}

/// Unconstrained coordinate states rho with tanh(rho) = FPS layout.
template <typename T>
Tensor<T> fps_init(std::size_t m, std::size_t side = 64) {
  constexpr double kClamp = 0.999999;
  std::vector<T> out;
  out.reserve(2 * m);
  for (const auto& [x, y] : fps_points(m, side)) {
    out.push_back(T(std::atanh(std::clamp(x, -kClamp, kClamp))));
    out.push_back(T(std::atanh(std::clamp(y, -kClamp, kClamp))));
  }
  return Tensor<T>({m, 2}, std::move(out));
}

}  // namespace veca
