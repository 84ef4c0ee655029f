#include "ssc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ssc {

namespace {

double eval_scalar(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                   const Shape& shape, const std::vector<double>& data) {
  NoGradGuard ng;
  Tensor<double> x = Tensor<double>::from(shape, data);
  Tensor<double> y = f(x);
  if (y.numel() != 1) {
    throw DimensionError("grad_check: f must return a scalar, got " +
                         shape_str(y.shape()));
  }
  double v = y.data()[0];
  if (!std::isfinite(v)) throw NumericError("grad_check: f returned non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, double eps, int64_t max_components, uint64_t seed) {
  const Shape shape = x.shape();
  const std::vector<double> base = x.data();

  // Backward gradient at the base point.
  Tensor<double> leaf = Tensor<double>::from(shape, base);
  leaf.set_requires_grad(true);
  Tensor<double> y = f(leaf);
  if (y.numel() != 1) {
    throw DimensionError("grad_check: f must return a scalar, got " +
                         shape_str(y.shape()));
  }
  if (!std::isfinite(y.data()[0])) {
    throw NumericError("grad_check: f returned non-finite value");
  }
  y.backward();
  std::vector<double> bp(base.size(), 0.0);
  if (leaf.has_grad()) bp = leaf.grad();

  std::vector<int64_t> indices(base.size());
  std::iota(indices.begin(), indices.end(), 0);
  if (max_components > 0 && static_cast<int64_t>(indices.size()) > max_components) {
    std::mt19937_64 rng(seed);
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(static_cast<size_t>(max_components));
  }

  GradCheckReport report;
  std::vector<double> probe = base;
  for (int64_t idx : indices) {
    const size_t i = static_cast<size_t>(idx);
    probe[i] = base[i] + eps;
    const double fp = eval_scalar(f, shape, probe);
    probe[i] = base[i] - eps;
    const double fm = eval_scalar(f, shape, probe);
    probe[i] = base[i];
    const double fd = (fp - fm) / (2.0 * eps);
    const double abs_err = std::abs(fd - bp[i]);
    const double rel = abs_err / std::max({std::abs(fd), std::abs(bp[i]), 1e-3});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.max_abs_err = abs_err;
      report.worst_index = idx;
      report.worst_fd = fd;
      report.worst_bp = bp[i];
    }
    ++report.checked;
  }
  return report;
}

}  // namespace ssc
