#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

#include "can/tensor.hpp"

// Central-difference gradient oracle. Runs in double precision; the checked
// code path must not share anything with it beyond the scalar function.

namespace can {

/// d f / d x by (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename F>
Tensor64 finite_difference_gradient(F&& f, const Tensor64& x, double h = 1e-5) {
  std::vector<double> base = x.to_vector();
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor64(x.shape(), std::move(plus)));
    const double fm = f(Tensor64(x.shape(), std::move(minus)));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor64(x.shape(), std::move(grad));
}

/// Variant for parameters held inside a larger structure: perturbs `param`
/// in place, calls the nullary `f`, and restores the original values.
template <typename F>
std::vector<double> finite_difference_gradient_inplace(F&& f, Tensor64& param, double h = 1e-5) {
  auto data = param.mutable_data();
  std::vector<double> grad(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + h;
    const double fp = f();
    data[i] = orig - h;
    const double fm = f();
    data[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Largest |a - b| / max(|a|, |b|, floor) over the two gradients. The floor
/// keeps near-zero entries from turning rounding noise into huge ratios.
inline double max_relative_error(std::span<const double> a, std::span<const double> b,
                                 double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace can
