#include "ssc/gen_loss.hpp"

#include <algorithm>
#include <cmath>

namespace ssc {

namespace {

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace

std::vector<double> TransportPlan::row_sums() const {
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* row = &d[static_cast<size_t>(i * m)];
    for (int64_t j = 0; j < m; ++j) acc += row[j];
    out[static_cast<size_t>(i)] = acc;
  }
  return out;
}

std::vector<double> TransportPlan::col_sums() const {
  std::vector<double> out(static_cast<size_t>(m), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    const double* row = &d[static_cast<size_t>(i * m)];
    for (int64_t j = 0; j < m; ++j) out[static_cast<size_t>(j)] += row[j];
  }
  return out;
}

std::vector<double> cost_matrix(const std::vector<std::array<double, 2>>& coords_a,
                                const std::vector<std::array<double, 2>>& coords_b,
                                double normalizer) {
  if (coords_a.empty()) throw Error("cost_matrix: empty source coordinates");
  if (normalizer <= 0.0) throw Error("cost_matrix: normalizer must be positive");
  const double inv2 = 1.0 / (normalizer * normalizer);
  std::vector<double> c(coords_a.size() * coords_b.size());
  for (size_t i = 0; i < coords_a.size(); ++i) {
    for (size_t j = 0; j < coords_b.size(); ++j) {
      const double dx = coords_a[i][0] - coords_b[j][0];
      const double dy = coords_a[i][1] - coords_b[j][1];
      c[i * coords_b.size() + j] = (dx * dx + dy * dy) * inv2;
    }
  }
  return c;
}

double transport_objective(const TransportProblem& prob, const std::vector<double>& cost,
                           const TransportPlan& plan) {
  const int64_t n = plan.n, m = plan.m;
  double lin = 0.0, ent = 0.0;
  for (int64_t i = 0; i < n * m; ++i) {
    lin += cost[static_cast<size_t>(i)] * plan.d[static_cast<size_t>(i)];
    ent += xlogx(plan.d[static_cast<size_t>(i)]);
  }
  double pen_a = 0.0;
  const auto a_hat = plan.row_sums();
  for (int64_t i = 0; i < n; ++i) {
    const double dlt = a_hat[static_cast<size_t>(i)] - prob.a[static_cast<size_t>(i)];
    pen_a += dlt * dlt;
  }
  double pen_b = 0.0;
  const auto b_hat = plan.col_sums();
  for (int64_t j = 0; j < m; ++j) {
    pen_b += std::abs(b_hat[static_cast<size_t>(j)] - prob.b[static_cast<size_t>(j)]);
  }
  return lin + prob.eps * ent + prob.tau * (pen_a + pen_b);
}

SolveResult solve_transport(const TransportProblem& prob) {
  const int64_t n = static_cast<int64_t>(prob.a.size());
  const int64_t m = static_cast<int64_t>(prob.b.size());
  if (n < 1) throw Error("solve_transport: needs n >= 1");
  if (prob.eps <= 0.0 || prob.tau <= 0.0) {
    throw Error("solve_transport: eps and tau must be positive");
  }
  for (double v : prob.a) {
    if (v < 0.0 || !std::isfinite(v)) throw Error("solve_transport: a must be finite, >= 0");
  }

  SolveResult res;
  res.plan.n = n;
  res.plan.m = m;
  if (m == 0) {
    // Every D-dependent term vanishes; the loss is the full a-marginal penalty.
    double acc = 0.0;
    for (double v : prob.a) acc += v * v;
    res.loss = prob.tau * acc;
    res.converged = true;
    return res;
  }

  const std::vector<double> cost = cost_matrix(prob.coords_a, prob.coords_b, 1.0);
  double sum_a = 0.0, sum_b = 0.0;
  for (double v : prob.a) sum_a += v;
  for (double v : prob.b) sum_b += v;

  auto& d = res.plan.d;
  d.resize(static_cast<size_t>(n * m));
  const double denom = sum_a * sum_b + prob.eps;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < m; ++j) {
      d[static_cast<size_t>(i * m + j)] =
          prob.a[static_cast<size_t>(i)] * prob.b[static_cast<size_t>(j)] / denom;
    }
  }

  double f = transport_objective(prob, cost, res.plan);
  if (!std::isfinite(f)) throw NumericError("solve_transport: non-finite objective at init");

  // Log-domain mirror descent with backtracking on F. The smooth part of the
  // gradient drives the multiplicative proposal; the |b_hat - b| term enters
  // through its exact per-column prox (a single scaling per column, which
  // either applies the +-tau subgradient factor or pins the column sum at
  // b_j), so iterates can sit exactly on the kink instead of oscillating.
  std::vector<double> grad(static_cast<size_t>(n * m));
  std::vector<double> trial(static_cast<size_t>(n * m));
  std::vector<double> col_sum(static_cast<size_t>(m));
  TransportPlan trial_plan;
  trial_plan.n = n;
  trial_plan.m = m;

  double step = 1.0;
  int iter = 0;
  bool stop = false;
  for (; iter < prob.max_iter && !stop; ++iter) {
    const auto a_hat = res.plan.row_sums();
    for (int64_t i = 0; i < n; ++i) {
      const double ra = 2.0 * prob.tau *
                        (a_hat[static_cast<size_t>(i)] - prob.a[static_cast<size_t>(i)]);
      for (int64_t j = 0; j < m; ++j) {
        const size_t ij = static_cast<size_t>(i * m + j);
        const double dv = d[ij];
        const double ent_term = dv > 0.0 ? prob.eps * (1.0 + std::log(dv)) : 0.0;
        grad[ij] = cost[ij] + ent_term + ra;
      }
    }

    bool accepted = false;
    for (int bt = 0; bt < 60 && !accepted; ++bt) {
      for (size_t ij = 0; ij < d.size(); ++ij) {
        trial[ij] = d[ij] > 0.0
                        ? d[ij] * std::exp(std::clamp(-step * grad[ij], -30.0, 30.0))
                        : 0.0;  // multiplicative updates keep zero entries at zero
      }
      std::fill(col_sum.begin(), col_sum.end(), 0.0);
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) col_sum[static_cast<size_t>(j)] += trial[static_cast<size_t>(i * m + j)];
      }
      const double shrink = std::exp(-std::min(step * prob.tau, 30.0));
      const double grow = std::exp(std::min(step * prob.tau, 30.0));
      for (int64_t j = 0; j < m; ++j) {
        const double w = col_sum[static_cast<size_t>(j)];
        const double bj = prob.b[static_cast<size_t>(j)];
        double rho;
        if (w * shrink >= bj) {
          rho = shrink;
        } else if (w * grow <= bj) {
          rho = grow;
        } else {
          rho = w > 0.0 ? bj / w : 1.0;  // land exactly on the kink
        }
        if (rho != 1.0) {
          for (int64_t i = 0; i < n; ++i) trial[static_cast<size_t>(i * m + j)] *= rho;
        }
      }
      trial_plan.d = trial;
      const double f_trial = transport_objective(prob, cost, trial_plan);
      if (std::isfinite(f_trial) && f_trial < f) {
        d.swap(trial_plan.d);
        const double drop = (f - f_trial) / std::max(std::abs(f), 1.0);
        f = f_trial;
        accepted = true;
        step = std::min(step * 1.3, 1e3);
        if (drop < prob.tol) {
          res.converged = true;
          stop = true;
        }
      } else {
        step *= 0.5;
        if (step < 1e-18) break;
      }
    }
    if (!accepted) {
      res.converged = true;  // line search exhausted: no descent direction left
      stop = true;
    }
  }
  res.loss = f;
  res.iterations = iter;
  if (!std::isfinite(f)) throw NumericError("solve_transport: non-finite objective");
  return res;
}

std::vector<double> transport_loss_grad_a(const TransportProblem& prob,
                                          const TransportPlan& plan) {
  std::vector<double> grad(prob.a.size());
  const auto a_hat = plan.m > 0 ? plan.row_sums()
                                : std::vector<double>(prob.a.size(), 0.0);
  for (size_t i = 0; i < prob.a.size(); ++i) {
    grad[i] = -2.0 * prob.tau * (a_hat[i] - prob.a[i]);
  }
  return grad;
}

// -- differentiable bridges -----------------------------------------------------------

namespace {

struct PooledDensity {
  std::vector<double> mass;                     // per cell
  std::vector<std::array<double, 2>> centers;   // cell centers, pixel coords
  int64_t cells_y = 0, cells_x = 0;
};

template <typename T>
PooledDensity pool_density(const std::vector<T>& v, int64_t h, int64_t w, int stride) {
  PooledDensity out;
  out.cells_y = (h + stride - 1) / stride;
  out.cells_x = (w + stride - 1) / stride;
  out.mass.assign(static_cast<size_t>(out.cells_y * out.cells_x), 0.0);
  out.centers.resize(static_cast<size_t>(out.cells_y * out.cells_x));
  for (int64_t cy = 0; cy < out.cells_y; ++cy) {
    const int64_t y0 = cy * stride, y1 = std::min(y0 + stride, h);
    for (int64_t cx = 0; cx < out.cells_x; ++cx) {
      const int64_t x0 = cx * stride, x1 = std::min(x0 + stride, w);
      double acc = 0.0;
      for (int64_t y = y0; y < y1; ++y) {
        for (int64_t x = x0; x < x1; ++x) {
          acc += static_cast<double>(v[static_cast<size_t>(y * w + x)]);
        }
      }
      const size_t cell = static_cast<size_t>(cy * out.cells_x + cx);
      out.mass[cell] = acc;
      out.centers[cell] = {0.5 * static_cast<double>(x0 + x1),
                           0.5 * static_cast<double>(y0 + y1)};
    }
  }
  return out;
}

int64_t density_hw(const Shape& s, int64_t* h, int64_t* w) {
  if (s.size() == 3 && s[0] == 1) {
    *h = s[1];
    *w = s[2];
  } else if (s.size() == 2) {
    *h = s[0];
    *w = s[1];
  } else {
    throw DimensionError("density loss: expected [1,H,W] or [H,W], got " + shape_str(s));
  }
  return *h * *w;
}

}  // namespace

template <typename T>
Tensor<T> generalized_loss(const Tensor<T>& density,
                           const std::vector<std::array<double, 2>>& points,
                           const OtConfig& cfg, OtStats* stats) {
  int64_t h = 0, w = 0;
  density_hw(density.shape(), &h, &w);
  const int stride = std::max(cfg.pool_stride, 1);
  const auto pooled = pool_density(density.data(), h, w, stride);

  TransportProblem prob;
  prob.a = pooled.mass;
  // ReLU output can carry tiny negative round-off; the solver demands >= 0.
  for (auto& v : prob.a) v = std::max(v, 0.0);
  prob.b.assign(points.size(), 1.0);
  prob.coords_a = pooled.centers;
  prob.coords_b = points;
  prob.eps = cfg.eps;
  prob.tau = cfg.tau;
  prob.max_iter = cfg.max_iter;
  prob.tol = cfg.tol;

  const double diag = std::sqrt(static_cast<double>(h * h + w * w));
  for (auto& p : prob.coords_a) {
    p[0] /= diag;
    p[1] /= diag;
  }
  for (auto& p : prob.coords_b) {
    p[0] /= diag;
    p[1] /= diag;
  }

  SolveResult solved = solve_transport(prob);
  if (stats) {
    stats->iterations = solved.iterations;
    stats->final_f = solved.loss;
    stats->converged = solved.converged;
  }
  const std::vector<double> grad_a = transport_loss_grad_a(prob, solved.plan);

  auto node = std::make_shared<detail::Node<T>>();
  node->shape = {1};
  node->data = std::make_shared<std::vector<T>>(1, static_cast<T>(solved.loss));
  node->op = "generalized_loss";
  check_finite(*node->data, "generalized_loss");
  auto pd = density.node();
  if (grad_enabled() && pd->requires_grad) {
    node->requires_grad = true;
    node->parents = {pd};
    const int64_t cells_x = pooled.cells_x;
    node->backward = [pd, grad_a, stride, h, w, cells_x](detail::Node<T>& self) {
      pd->ensure_grad();
      const T g = self.grad[0];
      // d(loss)/d(pixel) = d(loss)/d(cell mass), sum pooling is linear
      for (int64_t y = 0; y < h; ++y) {
        const int64_t cy = y / stride;
        for (int64_t x = 0; x < w; ++x) {
          const int64_t cx = x / stride;
          pd->grad[static_cast<size_t>(y * w + x)] +=
              g * static_cast<T>(grad_a[static_cast<size_t>(cy * cells_x + cx)]);
        }
      }
    };
  }
  return Tensor<T>(node);
}

std::vector<double> render_gaussian_target(int64_t h, int64_t w,
                                           const std::vector<std::array<double, 2>>& points,
                                           double sigma) {
  if (sigma <= 0.0) throw Error("gaussian target: sigma must be positive");
  std::vector<double> target(static_cast<size_t>(h * w), 0.0);
  const double radius = 4.0 * sigma;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (const auto& p : points) {
    const int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p[0] - radius)));
    const int64_t x1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(p[0] + radius)));
    const int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p[1] - radius)));
    const int64_t y1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(p[1] + radius)));
    double mass = 0.0;
    std::vector<double> kernel(static_cast<size_t>((y1 - y0 + 1) * (x1 - x0 + 1)), 0.0);
    size_t idx = 0;
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x, ++idx) {
        const double dx = static_cast<double>(x) + 0.5 - p[0];
        const double dy = static_cast<double>(y) + 0.5 - p[1];
        if (std::abs(dx) > radius || std::abs(dy) > radius) continue;
        const double v = std::exp(-(dx * dx + dy * dy) * inv2s2);
        kernel[idx] = v;
        mass += v;
      }
    }
    if (mass <= 0.0) continue;
    idx = 0;
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x, ++idx) {
        target[static_cast<size_t>(y * w + x)] += kernel[idx] / mass;
      }
    }
  }
  return target;
}

template <typename T>
Tensor<T> mse_density_loss(const Tensor<T>& density,
                           const std::vector<std::array<double, 2>>& points,
                           double sigma) {
  int64_t h = 0, w = 0;
  density_hw(density.shape(), &h, &w);
  const auto target_d = render_gaussian_target(h, w, points, sigma);
  std::vector<T> target(target_d.size());
  for (size_t i = 0; i < target_d.size(); ++i) target[i] = static_cast<T>(target_d[i]);
  Tensor<T> t = Tensor<T>::from(density.shape(), std::move(target));
  Tensor<T> diff = sub(density, t);
  return sum_all(mul(diff, diff));
}

template Tensor<float> generalized_loss<float>(const Tensor<float>&,
                                               const std::vector<std::array<double, 2>>&,
                                               const OtConfig&, OtStats*);
template Tensor<double> generalized_loss<double>(const Tensor<double>&,
                                                 const std::vector<std::array<double, 2>>&,
                                                 const OtConfig&, OtStats*);
template Tensor<float> mse_density_loss<float>(const Tensor<float>&,
                                               const std::vector<std::array<double, 2>>&,
                                               double);
template Tensor<double> mse_density_loss<double>(const Tensor<double>&,
                                                 const std::vector<std::array<double, 2>>&,
                                                 double);

}  // namespace ssc
