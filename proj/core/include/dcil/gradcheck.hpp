#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "dcil/tensor.hpp"

namespace dcil {

struct GradCheckResult {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;  // normalized by the largest gradient magnitude seen
};

/// Central-difference check: loss_fn is any scalar function of x, analytic the
/// gradient under test. The numeric side never touches the backward path, so
/// it is an independent oracle for it.
template <class LossFn>
GradCheckResult check_gradient(LossFn&& loss_fn, Tensor<double> x, const Tensor<double>& analytic, double h = 1e-5) {
  if (!x.same_shape(analytic)) throw shape_error("check_gradient: analytic gradient shape mismatch");
  GradCheckResult r;
  double scale = 1e-12;
  for (std::size_t i = 0; i < analytic.numel(); ++i) scale = std::max(scale, std::abs(analytic[i]));
  Tensor<double> numeric(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = loss_fn(x);
    x[i] = saved - h;
    const double fm = loss_fn(x);
    x[i] = saved;
    numeric[i] = (fp - fm) / (2.0 * h);
    scale = std::max(scale, std::abs(numeric[i]));
  }
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double err = std::abs(numeric[i] - analytic[i]);
    r.max_abs_error = std::max(r.max_abs_error, err);
  }
  r.max_rel_error = r.max_abs_error / scale;
  return r;
}

}  // namespace dcil
