#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "bahadur/linalg.hpp"
#include "bahadur/localized.hpp"
#include "bahadur/rng.hpp"
#include "bahadur/solver.hpp"
#include "bahadur/stats.hpp"

namespace bahadur {

inline constexpr double kWeightFloor = 1e-8;

struct WeightResult {
  Vec w;
  bool floored = false;  // some column had zero mass and was floored
};

// Penalty weights: scheme I is the (observation-weighted) root mean square of
// each feature column; scheme II divides each observation's contribution by
// the squared factor 1 + W_i'r. factors empty => scheme I.
inline WeightResult penalty_weights(const Matrix& F, const Vec& factors = {}, const Vec* obs_w = nullptr) {
  const int n = F.rows, p = F.cols;
  if (!factors.empty() && static_cast<int>(factors.size()) != n)
    throw std::invalid_argument("penalty_weights: factor length mismatch");
  WeightResult out;
  out.w.assign(p, 0.0);
  for (int j = 0; j < p; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      double v = F(i, j);
      if (!factors.empty()) {
        if (factors[i] <= 0.0) throw std::invalid_argument("penalty_weights: nonpositive factor");
        v /= factors[i];
      }
      s += (obs_w ? (*obs_w)[i] : 1.0 / n) * v * v;
    }
    out.w[j] = std::sqrt(s);
    if (out.w[j] < kWeightFloor) {
      out.w[j] = kWeightFloor;
      out.floored = true;
    }
  }
  return out;
}

// Localized penalty weights: levels from the W columns, slopes from
// W_ik (X_ij - x_j) columns, all under the kernel observation weights.
inline LocalPenaltySpec local_penalty_weights(const LocalDesign& des, double lambda, const Vec& factors = {}) {
  const int p = des.p(), d = des.d();
  Matrix F(des.W.rows, p * (1 + d));
  for (int i = 0; i < des.W.rows; ++i) {
    double* row = F.row(i);
    for (int k = 0; k < p; ++k) {
      row[k] = des.W(i, k);
      for (int j = 0; j < d; ++j) row[p + k * d + j] = des.W(i, k) * des.U(i, j) * des.kernel.h;
    }
  }
  WeightResult wr = penalty_weights(F, factors, &des.obs_w);
  LocalPenaltySpec pen;
  pen.lambda = lambda;
  pen.w_level.assign(wr.w.begin(), wr.w.begin() + p);
  pen.w_slope = Matrix(p, d);
  for (int k = 0; k < p; ++k)
    for (int j = 0; j < d; ++j) pen.w_slope(k, j) = wr.w[p + k * d + j];
  return pen;
}

// Scheme II without known factors: pilot fits starting from scheme I, each
// round recomputing factors 1 + W_i'r from the previous fit.
inline WeightResult iterative_scheme_ii(const Matrix& W, double lambda, int reweight_iters,
                                        const SolverOptions& opt = {}) {
  if (reweight_iters < 1) throw std::invalid_argument("iterative_scheme_ii: reweight_iters must be >= 1");
  WeightResult wr = penalty_weights(W);
  for (int it = 0; it < reweight_iters; ++it) {
    PenaltySpec pen{lambda, wr.w};
    FitResult fit = fit_plugin(W, pen, opt);
    Vec factors(W.rows);
    for (int i = 0; i < W.rows; ++i) factors[i] = 1.0 + dot(W.row(i), fit.r.data(), W.cols);
    wr = penalty_weights(W, factors);
  }
  return wr;
}

enum class LambdaRule {
  TheoryPI,
  TheoryFO,
  TheoryOracle,
  TheoryLocalPI,
  TheoryLocalFO,
  TheoryLocalOracle,
  CV,
};

struct LambdaContext {
  int N = 0;
  int M = 0;
  int p = 0;
  int d = 0;       // local rules only
  double h = 0.0;  // local rules only
  double delta = 0.05;
};

inline double lambda_value(LambdaRule rule, const LambdaContext& c) {
  if (c.N <= 0 || c.M <= 0 || c.p <= 0) throw std::invalid_argument("lambda_value: N, M, p must be positive");
  if (!(c.delta > 0.0 && c.delta < 1.0)) throw std::invalid_argument("lambda_value: delta must be in (0,1)");
  const double N = c.N, M = c.M, P = c.p, d = c.d, h = c.h;
  switch (rule) {
    case LambdaRule::TheoryOracle:
      return normal_quantile(1.0 - c.delta / (2.0 * P)) / std::sqrt(N);
    case LambdaRule::TheoryPI:
      return lambda_value(LambdaRule::TheoryOracle, c) + M / std::sqrt(N);
    case LambdaRule::TheoryFO:
      return lambda_value(LambdaRule::TheoryOracle, c) + std::sqrt(M / N);
    case LambdaRule::TheoryLocalOracle:
    case LambdaRule::TheoryLocalPI:
    case LambdaRule::TheoryLocalFO: {
      if (c.d <= 0 || !(c.h > 0.0)) throw std::invalid_argument("lambda_value: local rules need d and h");
      double nh = N * std::pow(h, d);
      double base = normal_quantile(1.0 - c.delta / (2.0 * P * (d + 1.0))) / std::sqrt(nh);
      if (rule == LambdaRule::TheoryLocalOracle) return base;
      if (rule == LambdaRule::TheoryLocalPI) return base + M / std::sqrt(nh) + d * M * h * h;
      return base + M / nh + M * d * d * std::pow(h, 4);
    }
    case LambdaRule::CV:
      throw std::invalid_argument("lambda_value: CV rule requires cross_validate_lambda");
  }
  throw std::logic_error("lambda_value: unknown rule");
}

// Appendix-H default bandwidth, overridable.
inline double default_bandwidth(int p, int N, int d) {
  if (p < 2 || N < 2 || d < 1) throw std::invalid_argument("default_bandwidth: bad arguments");
  return std::pow(std::log(static_cast<double>(p)) / N, 1.0 / (d + 4.0));
}

// Rate-optimal bandwidth h* = C' (M^3 / (N delta_N))^{1/(4d)}.
inline double optimal_bandwidth(int M, int N, int d, double c_prime = 1.0, double delta_n = 1.0) {
  if (M < 1 || N < 2 || d < 1 || !(c_prime > 0.0) || !(delta_n > 0.0))
    throw std::invalid_argument("optimal_bandwidth: bad arguments");
  return c_prime * std::pow(std::pow(static_cast<double>(M), 3) / (N * delta_n), 1.0 / (4.0 * d));
}

inline Vec default_lambda_grid(double lambda_max, int points = 20) {
  if (!(lambda_max > 0.0) || points < 8) throw std::invalid_argument("default_lambda_grid: bad arguments");
  Vec grid(points);
  double lo = std::log(lambda_max / 1000.0), hi = std::log(lambda_max);
  for (int i = 0; i < points; ++i) grid[i] = std::exp(lo + (hi - lo) * i / (points - 1));
  return grid;
}

inline std::vector<int> fold_assignment(int n, int folds, std::uint64_t seed) {
  if (folds < 2 || n < folds) throw std::invalid_argument("fold_assignment: need 2 <= folds <= n");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = Rng::derive(seed, 0x63766b66ULL);
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  std::vector<int> fold(n);
  for (int i = 0; i < n; ++i) fold[perm[i]] = i % folds;
  return fold;
}

struct CvResult {
  double lambda = 0.0;
  Vec grid;
  Vec curve;  // mean held-out score per grid point
};

// Generic K-fold cross-validation over a lambda grid. fit(train_rows, lambda)
// returns a model; score(model, test_rows) returns the summed held-out score
// (higher is better, feasibility floors applied by the scorer). Ties go to
// the larger lambda.
template <class FitFn, class ScoreFn>
CvResult cross_validate_lambda(int n, const Vec& grid, const std::vector<int>& fold, FitFn&& fit, ScoreFn&& score) {
  if (grid.empty()) throw std::invalid_argument("cross_validate_lambda: empty grid");
  if (static_cast<int>(fold.size()) != n) throw std::invalid_argument("cross_validate_lambda: fold size mismatch");
  int folds = *std::max_element(fold.begin(), fold.end()) + 1;
  CvResult res;
  res.grid = grid;
  res.curve.assign(grid.size(), 0.0);
  for (int k = 0; k < folds; ++k) {
    std::vector<int> train, test;
    for (int i = 0; i < n; ++i) (fold[i] == k ? test : train).push_back(i);
    for (size_t g = 0; g < grid.size(); ++g) {
      auto model = fit(train, grid[g]);
      res.curve[g] += score(model, test);
    }
  }
  for (auto& v : res.curve) v /= n;
  size_t best = 0;
  for (size_t g = 1; g < grid.size(); ++g)
    if (res.curve[g] >= res.curve[best]) best = g;  // ties to the larger lambda
  res.lambda = grid[best];
  return res;
}

template <class FitFn, class ScoreFn>
CvResult cross_validate_lambda(int n, const Vec& grid, int folds, std::uint64_t seed, FitFn&& fit, ScoreFn&& score) {
  return cross_validate_lambda(n, grid, fold_assignment(n, folds, seed), std::forward<FitFn>(fit),
                               std::forward<ScoreFn>(score));
}

}  // namespace bahadur
