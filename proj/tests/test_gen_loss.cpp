#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "test_util.hpp"

using namespace ssc;

namespace {
using D = Tensor<double>;

TransportProblem random_problem(Rng& rng, int64_t n, int64_t m, double eps, double tau) {
  TransportProblem p;
  p.eps = eps;
  p.tau = tau;
  for (int64_t i = 0; i < n; ++i) {
    p.a.push_back(rng.uniform(0.05, 1.0));
    p.coords_a.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
  }
  for (int64_t j = 0; j < m; ++j) {
    p.b.push_back(1.0);
    p.coords_b.push_back({rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
  }
  return p;
}
}  // namespace

TEST_CASE("cost matrix basics") {
  const std::vector<std::array<double, 2>> a{{0, 0}, {3, 4}};
  const std::vector<std::array<double, 2>> b{{0, 0}};
  const auto c = cost_matrix(a, b, 1.0);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == doctest::Approx(25.0));

  // swapping the two sides transposes
  const std::vector<std::array<double, 2>> x{{1, 2}, {5, 1}};
  const std::vector<std::array<double, 2>> y{{0, 0}, {2, 2}, {4, 4}};
  const auto cxy = cost_matrix(x, y, 2.0);
  const auto cyx = cost_matrix(y, x, 2.0);
  for (size_t i = 0; i < x.size(); ++i) {
    for (size_t j = 0; j < y.size(); ++j) {
      CHECK(cxy[i * y.size() + j] == doctest::Approx(cyx[j * x.size() + i]));
    }
  }
}

TEST_CASE("m = 0 short-circuits to the full marginal penalty") {
  TransportProblem p;
  p.a = {0.5, 1.5, 0.0};
  p.eps = 0.01;
  p.tau = 0.7;
  auto res = solve_transport(p);
  CHECK(res.loss == doctest::Approx(0.7 * (0.25 + 2.25)).epsilon(1e-12));
  CHECK(res.plan.m == 0);

  const auto grad = transport_loss_grad_a(p, res.plan);
  for (size_t i = 0; i < p.a.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(2.0 * 0.7 * p.a[i]).epsilon(1e-12));
  }
}

TEST_CASE("1x1 instance matches an exhaustive grid search") {
  TransportProblem p;
  p.a = {1.0};
  p.b = {1.0};
  p.coords_a = {{0.0, 0.0}};
  p.coords_b = {{0.0, 0.0}};  // C = [[0]]
  p.eps = 0.01;
  p.tau = 1.0;
  const auto res = solve_transport(p);
  const double oracle = testutil::ot_grid_oracle_1x1(0.0, 1.0, 1.0, p.eps, p.tau);
  CHECK(std::abs(res.loss - oracle) < 1e-3);
}

TEST_CASE("4x2 instance matches the projected-gradient oracle") {
  Rng rng(120);
  TransportProblem p = random_problem(rng, 4, 2, 0.01, 1.0);
  const auto res = solve_transport(p);
  const double oracle = testutil::ot_descent_oracle(p, 20, 5);
  CHECK(std::abs(res.loss - oracle) < 1e-3);
}

TEST_CASE("solver invariants: positivity and descent from the init") {
  Rng rng(121);
  for (int trial = 0; trial < 10; ++trial) {
    const double eps = trial % 2 == 0 ? 0.1 : 0.01;
    const double tau = trial % 3 == 0 ? 1.0 : 0.1;
    TransportProblem p = random_problem(rng, rng.uniform_int(1, 6),
                                        rng.uniform_int(1, 3), eps, tau);
    auto res = solve_transport(p);
    for (double v : res.plan.d) CHECK(v >= 0.0);
    CHECK(std::isfinite(res.loss));

    // final objective never exceeds the one at the initializer
    TransportPlan init;
    init.n = static_cast<int64_t>(p.a.size());
    init.m = static_cast<int64_t>(p.b.size());
    double sum_a = 0, sum_b = 0;
    for (double v : p.a) sum_a += v;
    for (double v : p.b) sum_b += v;
    init.d.resize(static_cast<size_t>(init.n * init.m));
    for (int64_t i = 0; i < init.n; ++i) {
      for (int64_t j = 0; j < init.m; ++j) {
        init.d[static_cast<size_t>(i * init.m + j)] =
            p.a[static_cast<size_t>(i)] * p.b[static_cast<size_t>(j)] /
            (sum_a * sum_b + p.eps);
      }
    }
    const auto cost = cost_matrix(p.coords_a, p.coords_b, 1.0);
    CHECK(res.loss <= transport_objective(p, cost, init) + 1e-12);
  }
}

TEST_CASE("loss gradient is the marginal residual") {
  TransportProblem p;
  p.a = {0.25, 0.75};
  p.b = {1.0};
  p.coords_a = {{0, 0}, {1, 0}};
  p.coords_b = {{0.5, 0}};
  p.tau = 0.4;

  // a plan whose rows already sum to a gives a zero gradient
  TransportPlan plan;
  plan.n = 2;
  plan.m = 1;
  plan.d = {0.25, 0.75};
  const auto g0 = transport_loss_grad_a(p, plan);
  CHECK(g0[0] == 0.0);
  CHECK(g0[1] == 0.0);

  plan.d = {0.5, 0.5};
  const auto g1 = transport_loss_grad_a(p, plan);
  CHECK(g1[0] == doctest::Approx(-2.0 * 0.4 * (0.5 - 0.25)));
  CHECK(g1[1] == doctest::Approx(-2.0 * 0.4 * (0.5 - 0.75)));
}

TEST_CASE("generalized loss bridge: envelope gradient vs re-solve differences") {
  Rng rng(122);
  std::vector<double> density(static_cast<size_t>(6 * 6));
  for (auto& v : density) v = rng.uniform(0.05, 0.4);
  D d = D::from({1, 6, 6}, std::vector<double>(density.begin(), density.end()));
  d.set_requires_grad(true);
  OtConfig cfg;
  cfg.eps = 0.05;
  cfg.tau = 0.5;
  cfg.pool_stride = 2;
  const std::vector<std::array<double, 2>> points{{1.5, 2.0}, {4.0, 4.5}};
  D loss = generalized_loss(d, points, cfg);
  loss.backward();
  REQUIRE(d.has_grad());

  const double eps_fd = 1e-5;
  Rng pick(123);
  double worst = 0.0;
  for (int probe = 0; probe < 6; ++probe) {
    const size_t i = static_cast<size_t>(pick.uniform_int(0, 35));
    auto perturbed = density;
    NoGradGuard ng;
    perturbed[i] = density[i] + eps_fd;
    const double fp =
        generalized_loss(D::from({1, 6, 6}, std::vector<double>(perturbed.begin(),
                                                                perturbed.end())),
                         points, cfg)[0];
    perturbed[i] = density[i] - eps_fd;
    const double fm =
        generalized_loss(D::from({1, 6, 6}, std::vector<double>(perturbed.begin(),
                                                                perturbed.end())),
                         points, cfg)[0];
    const double fd = (fp - fm) / (2 * eps_fd);
    const double bp = d.grad()[i];
    worst = std::max(worst, std::abs(fd - bp) / std::max({std::abs(fd), std::abs(bp), 1e-3}));
  }
  CHECK(worst < 1e-2);
}

TEST_CASE("pooled solve preserves counts in the problem masses") {
  Rng rng(124);
  std::vector<double> density(static_cast<size_t>(8 * 8));
  double total = 0.0;
  for (auto& v : density) {
    v = rng.uniform(0.0, 0.3);
    total += v;
  }
  D d = D::from({1, 8, 8}, std::vector<double>(density.begin(), density.end()));
  OtConfig cfg;
  cfg.pool_stride = 4;
  OtStats stats;
  NoGradGuard ng;
  (void)generalized_loss(d, {{4.0, 4.0}}, cfg, &stats);
  CHECK(stats.iterations >= 1);
  CHECK(stats.final_f < total * total);  // sanity: far below the trivial bound
}

TEST_CASE("mse loss against the rendered gaussian target") {
  SUBCASE("prediction equal to the target gives zero") {
    const std::vector<std::array<double, 2>> pts{{4.5, 4.5}};
    const auto target = render_gaussian_target(9, 9, pts, 1.0);
    D pred = D::from({1, 9, 9}, std::vector<double>(target.begin(), target.end()));
    CHECK(mse_density_loss(pred, pts, 1.0)[0] == doctest::Approx(0.0));
  }

  SUBCASE("no points and zero prediction give zero") {
    D zero = D::zeros({1, 5, 5});
    CHECK(mse_density_loss(zero, {}, 1.0)[0] == 0.0);
  }

  SUBCASE("zero prediction loss equals the direct gaussian double sum") {
    const std::vector<std::array<double, 2>> pts{{4.5, 4.5}};
    D zero = D::zeros({1, 9, 9});
    const double loss = mse_density_loss(zero, pts, 1.0)[0];

    // independent double-loop rendering
    double mass = 0.0;
    std::vector<double> kernel(81, 0.0);
    for (int y = 0; y < 9; ++y) {
      for (int x = 0; x < 9; ++x) {
        const double dx = x + 0.5 - 4.5, dy = y + 0.5 - 4.5;
        if (std::abs(dx) > 4.0 || std::abs(dy) > 4.0) continue;
        kernel[static_cast<size_t>(y * 9 + x)] = std::exp(-(dx * dx + dy * dy) / 2.0);
        mass += kernel[static_cast<size_t>(y * 9 + x)];
      }
    }
    double expect = 0.0;
    for (double v : kernel) expect += (v / mass) * (v / mass);
    CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
  }

  SUBCASE("target integrates to the point count") {
    const std::vector<std::array<double, 2>> pts{{3.0, 3.0}, {10.0, 8.0}, {1.0, 11.0}};
    const auto target = render_gaussian_target(14, 12, pts, 1.5);
    double total = 0.0;
    for (double v : target) total += v;
    CHECK(total == doctest::Approx(3.0).epsilon(1e-9));
  }
}
