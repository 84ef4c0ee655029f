#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "ssc/nn.hpp"
#include "test_util.hpp"

using namespace ssc;
using testutil::rand_tensor;

namespace {
using D = Tensor<double>;
}

TEST_CASE("conv2d 1x1 kernel is a per-pixel linear map") {
  Rng rng(11);
  D x = rand_tensor<double>({2, 3, 3}, rng);
  D w = D::from({1, 2, 1, 1}, {2.0, -1.0});
  D y = conv2d(x, w, D(), 1, 0);
  for (int i = 0; i < 9; ++i) {
    CHECK(y[i] == doctest::Approx(2.0 * x[i] - x[9 + i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d delta kernel is the identity") {
  Rng rng(12);
  D x = rand_tensor<double>({3, 5, 6}, rng);
  std::vector<double> wdata(3 * 3 * 3 * 3, 0.0);
  for (int c = 0; c < 3; ++c) wdata[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  D w = D::from({3, 3, 3, 3}, std::move(wdata));
  D y = conv2d(x, w, D(), 1, 1);
  CHECK(testutil::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d matches the naive loop oracle exactly") {
  for (uint64_t seed : {21, 22, 23}) {
    Rng rng(seed);
    for (int stride : {1, 2}) {
      D x = rand_tensor<double>({1, 5, 5}, rng);
      D w = rand_tensor<double>({2, 1, 3, 3}, rng);
      D b = rand_tensor<double>({2}, rng);
      D y = conv2d(x, w, b, stride, 1);
      const auto expect = testutil::conv2d_oracle(x.data(), 1, 5, 5, w.data(), 2, 3,
                                                  b.data(), stride, 1);
      for (size_t i = 0; i < expect.size(); ++i) {
        CHECK(std::abs(y[static_cast<int64_t>(i)] - expect[i]) < 1e-6);
      }
    }
  }
}

TEST_CASE("conv2d rejects invalid geometry") {
  D x = D::zeros({1, 4, 4});
  CHECK_THROWS_AS(conv2d(x, D::zeros({1, 1, 2, 2}), D(), 1, 0), DimensionError);
  CHECK_THROWS_AS(conv2d(x, D::zeros({1, 2, 3, 3}), D(), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, D::zeros({1, 1, 3, 3}), D(), 0, 1), DimensionError);
}

TEST_CASE("upsample preserves constants and identity size") {
  D c = D::full({2, 3, 4}, 0.37);
  D up = upsample_bilinear(c, 7, 9, 1);
  for (int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(0.37));

  Rng rng(13);
  D x = rand_tensor<double>({2, 3, 4}, rng);
  CHECK(testutil::max_abs_diff(upsample_bilinear(x, 3, 4, 1), x) == 0.0);
}

TEST_CASE("upsample 2x2 -> 4x4 matches the pointwise bilinear oracle") {
  Rng rng(14);
  D x = rand_tensor<double>({1, 2, 2}, rng);
  D y = upsample_bilinear(x, 4, 4, 1);
  const std::vector<double> plane(x.data().begin(), x.data().end());
  for (int64_t oy = 0; oy < 4; ++oy) {
    for (int64_t ox = 0; ox < 4; ++ox) {
      const double u = (oy + 0.5) * 2.0 / 4.0 - 0.5;
      const double v = (ox + 0.5) * 2.0 / 4.0 - 0.5;
      CHECK(y[oy * 4 + ox] ==
            doctest::Approx(testutil::bilinear_at(plane, 2, 2, u, v)).epsilon(1e-12));
    }
  }
}

TEST_CASE("upsample rejects shrinking and empty targets") {
  D x = D::zeros({1, 4, 4});
  CHECK_THROWS_AS(upsample_bilinear(x, 2, 4, 1), DimensionError);
  CHECK_THROWS_AS(upsample_bilinear(x, 0, 4, 1), DimensionError);
}

TEST_CASE("group_norm of a constant input is all zeros") {
  D x = D::full({4, 3, 3}, 2.5);
  D gamma = D::full({4}, 1.0);
  D beta = D::zeros({4});
  D y = group_norm(x, 2, gamma, beta, 1e-5);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i]) < 1e-9);
}

TEST_CASE("group_norm normalizes each group") {
  Rng rng(15);
  D x = rand_tensor<double>({6, 4, 4}, rng, -2.0, 3.0);
  D gamma = D::full({6}, 1.0);
  D beta = D::zeros({6});
  D y = group_norm(x, 3, gamma, beta, 1e-5);
  const int64_t glen = 2 * 16;
  for (int g = 0; g < 3; ++g) {
    double mean = 0.0, var = 0.0;
    for (int64_t i = 0; i < glen; ++i) mean += y[g * glen + i];
    mean /= glen;
    for (int64_t i = 0; i < glen; ++i) {
      const double d = y[g * glen + i] - mean;
      var += d * d;
    }
    var /= glen;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("group_norm is invariant to per-group affine input changes") {
  Rng rng(16);
  D x = rand_tensor<double>({4, 5, 5}, rng);
  D gamma = rand_tensor<double>({4}, rng, 0.5, 1.5);
  D beta = rand_tensor<double>({4}, rng, -0.5, 0.5);
  D y0 = group_norm(x, 2, gamma, beta, 1e-6);

  // scale group 0 by a > 0 and shift by b; group 1 differently
  std::vector<double> mod = x.data();
  const int64_t glen = 2 * 25;
  for (int64_t i = 0; i < glen; ++i) mod[static_cast<size_t>(i)] = 1.9 * mod[i] + 0.8;
  for (int64_t i = glen; i < 2 * glen; ++i) mod[static_cast<size_t>(i)] = 0.3 * mod[i] - 2.0;
  D y1 = group_norm(D::from(x.shape(), std::move(mod)), 2, gamma, beta, 1e-6);
  CHECK(testutil::max_abs_diff(y0, y1) < 1e-4);
}

TEST_CASE("group_norm rejects indivisible group counts") {
  D x = D::zeros({5, 2, 2});
  CHECK_THROWS_AS(group_norm(x, 2, D::full({5}, 1.0), D::zeros({5}), 1e-5),
                  DimensionError);
}
