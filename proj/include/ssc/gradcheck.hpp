#pragma once

#include <functional>

#include "ssc/tensor.hpp"

namespace ssc {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t worst_index = -1;
  double worst_fd = 0.0;
  double worst_bp = 0.0;
  int64_t checked = 0;

  bool passed(double tol) const { return max_rel_err < tol; }
};

// Central finite differences (f(x+eps*e) - f(x-eps*e)) / 2eps against the
// recorded backward gradient of the scalar-valued f, evaluated at 64-bit.
// Relative error uses denominator max(|fd|, |bp|, 1e-3) per component.
// max_components > 0 checks a seeded random subset instead of every entry.
GradCheckReport grad_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double eps = 1e-5, int64_t max_components = 0,
    uint64_t seed = 0);

}  // namespace ssc
