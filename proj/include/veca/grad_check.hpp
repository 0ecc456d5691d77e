#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "veca/tensor.hpp"

namespace veca {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences over the given leaf tensors.
///
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// `stride` > 1 checks every stride-th coordinate of each tensor (the first
/// coordinate is always included).
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params, T h,
                           std::size_t stride = 1) {
  for (auto& p : params) p.zero_grad();
  Tensor<T> y = f();
  y.backward();
  std::vector<std::vector<T>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckResult res;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); i += std::max<std::size_t>(stride, 1)) {
      const T orig = data[i];
      const std::string where = "tensor " + std::to_string(k) + " coordinate " + std::to_string(i);
      auto eval = [&](T at) {
        data[i] = at;
        T v;
        try {
          v = f().item();
        } catch (const NumericError& e) {
          data[i] = orig;
          throw NumericError("grad_check: non-finite objective when perturbing " + where + ": " + e.what());
        }
        data[i] = orig;
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite objective when perturbing " + where);
        return v;
      };
      const T fp = eval(orig + h);
      const T fm = eval(orig - h);
      const double numeric = (double(fp) - double(fm)) / (2.0 * double(h));
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++res.coords_checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = k;
        res.worst_index = i;
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return res;
}

/// Single-tensor form.
template <typename T>
double grad_check(const std::function<Tensor<T>()>& f, const Tensor<T>& theta, T h) {
  return grad_check<T>(f, std::vector<Tensor<T>>{theta}, h).max_rel_error;
}

}  // namespace veca
