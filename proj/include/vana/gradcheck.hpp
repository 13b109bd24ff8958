#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "vana/tensor.hpp"

namespace vana {

// Outcome of one analytic-vs-numeric gradient comparison.
struct GradReport {
  double max_rel_error = 0.0;
  std::vector<std::int64_t> worst_index;
  double tolerance = 1e-5;
  bool passed = true;
};

// Central finite differences of a scalar-valued function, one coordinate at a
// time: (f(x+eps e_i) - f(x-eps e_i)) / (2 eps). The independent oracle every
// analytic VJP is certified against; it never calls any backward path.
inline Tensor<double> finite_diff_grad(const std::function<double(const Tensor<double>&)>& f,
                                       const Tensor<double>& x, double eps = 1e-5) {
  if (!(eps > 0)) throw ValueError("finite_diff_grad: eps must be positive");
  Tensor<double> grad(x.shape());
  Tensor<double> probe = x;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double fp = f(probe);
    probe[i] = saved - eps;
    const double fm = f(probe);
    probe[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw ValueError("finite_diff_grad: non-finite function value near coordinate " +
                       std::to_string(i));
    grad[i] = (fp - fm) / (2 * eps);
  }
  return grad;
}

// max_i |a_i - b_i| / (max(max|a|, max|b|) + 1e-12).
inline double rel_error(const Tensor<double>& a, const Tensor<double>& b) {
  if (!a.same_shape(b))
    throw ShapeError("rel_error: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const double denom = std::max(max_abs(a), max_abs(b)) + 1e-12;
  double worst = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  return worst;
}

inline std::vector<std::int64_t> unflatten_index(std::int64_t flat, const Shape& shape) {
  std::vector<std::int64_t> idx(shape.size());
  for (std::size_t a = shape.size(); a-- > 0;) {
    idx[a] = shape[a] == 0 ? 0 : flat % shape[a];
    flat /= shape[a] == 0 ? 1 : shape[a];
  }
  return idx;
}

inline GradReport grad_report(const Tensor<double>& analytic, const Tensor<double>& numeric,
                              double tolerance = 1e-5) {
  if (!analytic.same_shape(numeric))
    throw ShapeError("grad_report: shape mismatch " + shape_str(analytic.shape()) + " vs " +
                     shape_str(numeric.shape()));
  const double denom = std::max(max_abs(analytic), max_abs(numeric)) + 1e-12;
  GradReport report;
  report.tolerance = tolerance;
  std::int64_t worst = 0;
  for (std::int64_t i = 0; i < analytic.size(); ++i) {
    const double e = std::abs(analytic[i] - numeric[i]) / denom;
    if (e > report.max_rel_error) {
      report.max_rel_error = e;
      worst = i;
    }
  }
  report.worst_index = unflatten_index(worst, analytic.shape());
  report.passed = report.max_rel_error < tolerance;
  return report;
}

inline GradReport merge_reports(const GradReport& a, const GradReport& b) {
  return a.max_rel_error >= b.max_rel_error ? a : b;
}

}  // namespace vana
