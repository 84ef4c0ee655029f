#pragma once

#include <array>

#include "ssc/tensor.hpp"

namespace ssc {

// Unbalanced entropic optimal transport between predicted per-pixel density
// and dot annotations:
//   F(D) = <C,D> - eps*H(D) + tau*||D 1 - a||_2^2 + tau*||D^T 1 - b||_1,
//   H(D) = -sum D log D.
// The solver is log-domain mirror descent with backtracking; gradients w.r.t.
// the density use the envelope theorem (D held fixed at the optimum).

struct OtConfig {
  double eps = 0.01;
  double tau = 0.1;
  int max_iter = 500;
  double tol = 1e-7;    // relative F decrease stop
  int pool_stride = 1;  // count-preserving sum pooling before the solve
};

struct TransportProblem {
  std::vector<double> a;                        // n predicted masses, >= 0
  std::vector<double> b;                        // m annotation masses, >= 0
  std::vector<std::array<double, 2>> coords_a;  // (x, y) per pixel/cell
  std::vector<std::array<double, 2>> coords_b;
  double eps = 0.01;
  double tau = 0.1;
  int max_iter = 500;
  double tol = 1e-7;
};

struct TransportPlan {
  int64_t n = 0, m = 0;
  std::vector<double> d;  // n*m, row-major, >= 0

  std::vector<double> row_sums() const;  // a_hat = D 1
  std::vector<double> col_sums() const;  // b_hat = D^T 1
};

struct SolveResult {
  TransportPlan plan;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

// C_ij = ||x_i - y_j||^2 / normalizer^2 (squared Euclidean).
std::vector<double> cost_matrix(const std::vector<std::array<double, 2>>& coords_a,
                                const std::vector<std::array<double, 2>>& coords_b,
                                double normalizer);

double transport_objective(const TransportProblem& prob, const std::vector<double>& cost,
                           const TransportPlan& plan);

SolveResult solve_transport(const TransportProblem& prob);

// dL/da_i = -2 tau (a_hat_i - a_i), the only term touching a at fixed D.
std::vector<double> transport_loss_grad_a(const TransportProblem& prob,
                                          const TransportPlan& plan);

struct OtStats {
  int iterations = 0;
  double final_f = 0.0;
  bool converged = false;
};

// Differentiable bridge: density [1,H,W] (or [H,W]) against point
// annotations in pixel coordinates. pool_stride > 1 sum-pools density cells
// before the solve; the cost normalizer is the image diagonal.
template <typename T>
Tensor<T> generalized_loss(const Tensor<T>& density,
                           const std::vector<std::array<double, 2>>& points,
                           const OtConfig& cfg, OtStats* stats = nullptr);

// Gaussian-rendered target (kernel truncated at 4 sigma, renormalized to unit
// mass per point) for the MSE baseline.
std::vector<double> render_gaussian_target(int64_t h, int64_t w,
                                           const std::vector<std::array<double, 2>>& points,
                                           double sigma);

// Sum of squared differences against the rendered target.
template <typename T>
Tensor<T> mse_density_loss(const Tensor<T>& density,
                           const std::vector<std::array<double, 2>>& points,
                           double sigma);

}  // namespace ssc
