#include "doctest.h"

#include <cmath>

#include "bahadur/bundle.hpp"
#include "bahadur/marginals.hpp"
#include "bahadur/rng.hpp"

using namespace bahadur;

namespace {

JointModel setup1() {
  Vec alpha = {0.613, 0.491, 0.653, 0.510};
  Vec r(11, 0.0);
  r[7] = -0.339;
  r[10] = 0.249;
  return JointModel::make(alpha, r);
}

// Appendix-H style conditional marginals: alpha_j(x) = 1/(1 + e^{theta_j x}),
// independent coordinates. Returns (X, Y).
std::pair<Matrix, std::vector<std::vector<int>>> logistic_dgp(int n, std::uint64_t seed) {
  const Vec theta = {0.1, 0.2, 0.3, 0.4};
  Rng rng(seed);
  Matrix X(n, 1);
  std::vector<std::vector<int>> Y(n, std::vector<int>(4));
  for (int i = 0; i < n; ++i) {
    X(i, 0) = rng.uniform();
    for (int j = 0; j < 4; ++j) {
      double a = 1.0 / (1.0 + std::exp(theta[j] * X(i, 0)));
      Y[i][j] = rng.uniform() < a ? 1 : 0;
    }
  }
  return {X, Y};
}

}  // namespace

TEST_CASE("unconditional marginal estimator") {
  std::vector<std::vector<int>> Y = {{1, 1}, {1, 0}, {1, 0}, {0, 0}};
  Vec a = fit_marginals_unconditional(Y);
  CHECK(a[0] == doctest::Approx(0.75));
  CHECK(a[1] == doctest::Approx(0.25));

  std::vector<std::vector<int>> ones(5, std::vector<int>{1});
  CHECK(fit_marginals_unconditional(ones)[0] == doctest::Approx(1.0 - 1e-3));
  CHECK_THROWS(fit_marginals_unconditional({}));

  // 3-sigma binomial bound at n = 500 on setup 1
  JointModel m = setup1();
  auto S = sample(m, 500, 314);
  Vec ah = fit_marginals_unconditional(S);
  for (int j = 0; j < 4; ++j) CHECK(std::fabs(ah[j] - m.alpha[j]) <= 0.07);
}

TEST_CASE("unconditional bootstrap box") {
  JointModel m = setup1();
  auto Y = sample(m, 500, 5);
  Vec ah = fit_marginals_unconditional(Y);

  // delta -> 1: quantile at level ~0, box collapses onto alpha_hat
  auto tight = bootstrap_box_unconditional(Y, ah, 0.999, 1000, 1);
  for (int j = 0; j < 4; ++j) {
    CHECK(tight.level_hi[j] - tight.level_lo[j] < 0.02);
    CHECK(ah[j] >= tight.level_lo[j]);
    CHECK(ah[j] <= tight.level_hi[j]);
  }

  // cv nonincreasing in delta, same seed
  double prev = 1e9;
  for (double d : {0.01, 0.05, 0.2, 0.5}) {
    double cv = bootstrap_box_unconditional(Y, ah, d, 1000, 77).cv;
    CHECK(cv <= prev + 1e-15);
    prev = cv;
  }

  CHECK_THROWS(bootstrap_box_unconditional(Y, ah, 0.05, 50, 1));  // B too small
}

TEST_CASE("M=1 multiplier cv approaches the Gaussian limit") {
  const int n = 20000;
  Rng rng(8);
  std::vector<std::vector<int>> Y(n, std::vector<int>(1));
  for (auto& y : Y) y[0] = rng.uniform() < 0.5 ? 1 : 0;
  Vec ah = fit_marginals_unconditional(Y);
  auto box = bootstrap_box_unconditional(Y, ah, 0.05, 4000, 3);
  double expected = 1.959964 / std::sqrt(static_cast<double>(n));
  CHECK(std::fabs(box.cv - expected) / expected < 0.15);
}

TEST_CASE("unconditional box coverage at the nominal level") {
  JointModel m = setup1();
  int covered = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    auto Y = sample(m, 500, 1000 + rep);
    Vec ah = fit_marginals_unconditional(Y);
    auto box = bootstrap_box_unconditional(Y, ah, 0.05, 500, 9000 + rep);
    bool in = true;
    for (int j = 0; j < 4; ++j) in &= (m.alpha[j] >= box.level_lo[j] && m.alpha[j] <= box.level_hi[j]);
    covered += in;
  }
  CHECK(covered >= 0.90 * reps);
}

TEST_CASE("local linear marginal fit") {
  KernelSpec kern(KernelKind::UniformBall, 0.3, 1);

  // constant response pins the level at the truncation boundary, zero slope
  {
    const int n = 200;
    Matrix X(n, 1), Y(n, 1);
    Rng rng(4);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = rng.uniform();
      Y(i, 0) = 1.0;
    }
    auto fit = fit_marginals_local(X, Y, {0.5}, kern);
    CHECK(fit.alpha_hat[0] == doctest::Approx(1.0 - 1e-3));
    CHECK(std::fabs(fit.beta(0, 0)) < 1e-8);
  }

  // local linear reproduces affine responses exactly
  {
    const int n = 400;
    Matrix X(n, 1), Y(n, 2);
    Rng rng(5);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = rng.uniform();
      Y(i, 0) = 0.4 + 0.2 * (X(i, 0) - 0.5);
      Y(i, 1) = 0.6 - 0.35 * (X(i, 0) - 0.5);
    }
    auto fit = fit_marginals_local(X, Y, {0.5}, kern);
    CHECK(std::fabs(fit.alpha_hat[0] - 0.4) < 1e-8);
    CHECK(std::fabs(fit.beta(0, 0) - 0.2) < 1e-8);
    CHECK(std::fabs(fit.alpha_hat[1] - 0.6) < 1e-8);
    CHECK(std::fabs(fit.beta(1, 0) + 0.35) < 1e-8);
  }

  // Monte Carlo accuracy on the logistic conditional DGP
  {
    auto [X, Yb] = logistic_dgp(2000, 11);
    auto fit = fit_marginals_local(X, to_matrix(Yb), {0.5}, KernelSpec(KernelKind::FloorShiftedQuadratic, 0.2, 1));
    const Vec theta = {0.1, 0.2, 0.3, 0.4};
    for (int j = 0; j < 4; ++j) {
      double truth = 1.0 / (1.0 + std::exp(theta[j] * 0.5));
      CHECK(std::fabs(fit.alpha_hat[j] - truth) <= 0.1);
    }
  }

  // anchor with no local data
  {
    Matrix X(10, 1), Y(10, 1);
    for (int i = 0; i < 10; ++i) X(i, 0) = 0.1;
    CHECK_THROWS(fit_marginals_local(X, Y, {5.0}, kern));
  }
}

TEST_CASE("conditional bootstrap box") {
  auto [X, Yb] = logistic_dgp(800, 21);
  Matrix Y = to_matrix(Yb);
  KernelSpec kern(KernelKind::FloorShiftedQuadratic, 0.25, 1);
  auto fit = fit_marginals_local(X, Y, {0.5}, kern);

  // near-degenerate quantile level collapses onto the fit
  auto tight = bootstrap_box_local(fit, 0.999, 1000, 2);
  for (int j = 0; j < 4; ++j) {
    CHECK(fit.alpha_hat[j] >= tight.level_lo[j] - 1e-12);
    CHECK(fit.alpha_hat[j] <= tight.level_hi[j] + 1e-12);
    CHECK(fit.beta(j, 0) >= tight.slope_lo(j, 0) - 1e-12);
    CHECK(fit.beta(j, 0) <= tight.slope_hi(j, 0) + 1e-12);
  }

  // zero residuals: degenerate box with a flag
  {
    Matrix Xc(50, 1), Yc(50, 1);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      Xc(i, 0) = rng.uniform();
      Yc(i, 0) = 0.3 + 0.1 * (Xc(i, 0) - 0.5);
    }
    auto f = fit_marginals_local(Xc, Yc, {0.5}, KernelSpec(KernelKind::UniformBall, 0.6, 1));
    auto b = bootstrap_box_local(f, 0.05, 500, 4);
    CHECK(b.degenerate);
    CHECK(b.level_lo[0] == doctest::Approx(f.alpha_hat[0]));
  }

  // cv monotone in delta
  double prev = 1e9;
  for (double d : {0.01, 0.05, 0.2}) {
    double cv = bootstrap_box_local(fit, d, 500, 55).cv;
    CHECK(cv <= prev + 1e-15);
    prev = cv;
  }
}

TEST_CASE("conditional box covers the linearization parameters") {
  const Vec theta = {0.1, 0.2, 0.3, 0.4};
  const double x0 = 0.5;
  Vec a0(4), g0(4);
  for (int j = 0; j < 4; ++j) {
    double e = std::exp(theta[j] * x0);
    a0[j] = 1.0 / (1.0 + e);
    g0[j] = -theta[j] * e / ((1.0 + e) * (1.0 + e));  // d alpha_j / dx
  }
  KernelSpec kern(KernelKind::FloorShiftedQuadratic, 0.25, 1);
  int covered = 0;
  const int reps = 150;
  for (int rep = 0; rep < reps; ++rep) {
    auto [X, Yb] = logistic_dgp(1000, 40000 + rep);
    auto fit = fit_marginals_local(X, to_matrix(Yb), {x0}, kern);
    auto box = bootstrap_box_local(fit, 0.05, 500, 70000 + rep);
    bool in = true;
    for (int j = 0; j < 4; ++j) {
      in &= (a0[j] >= box.level_lo[j] && a0[j] <= box.level_hi[j]);
      in &= (g0[j] >= box.slope_lo(j, 0) && g0[j] <= box.slope_hi(j, 0));
    }
    covered += in;
  }
  // linearization bias keeps this below exact nominal coverage
  CHECK(covered >= 0.85 * reps);
}
