#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "radapt/tensor.hpp"

namespace radapt {

/// Central-difference gradient of a scalar field, the verification oracle
/// every analytic gradient in this project is checked against.
/// Throws if f returns a non-finite value at any probe point.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                                     const Tensor& x0, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_grad: h must be > 0");
  Tensor grad(x0.shape());
  Tensor x = x0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_difference_grad: non-finite f at coordinate " +
                               std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Same oracle restricted to a coordinate subset; used when the full sweep
/// would be too expensive (model parameters, anchors).
inline std::vector<double> finite_difference_grad_at(
    const std::function<double(const Tensor&)>& f, const Tensor& x0, double h,
    const std::vector<std::size_t>& coords) {
  if (h <= 0.0) throw std::invalid_argument("finite_difference_grad: h must be > 0");
  std::vector<double> out;
  out.reserve(coords.size());
  Tensor x = x0;
  for (std::size_t i : coords) {
    const double orig = x.at(i);
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("finite_difference_grad: non-finite f at coordinate " +
                               std::to_string(i));
    }
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

/// |a-b| / max(|a|, |b|, floor); the agreement metric used by all gradient
/// spot checks.
inline double relative_error(double a, double b, double floor = 1e-6) {
  const double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom;
}

}  // namespace radapt
