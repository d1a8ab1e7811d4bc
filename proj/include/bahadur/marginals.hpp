#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "bahadur/kernel.hpp"
#include "bahadur/linalg.hpp"
#include "bahadur/rng.hpp"
#include "bahadur/stats.hpp"

namespace bahadur {

inline constexpr double kDefaultEpsTrunc = 1e-3;

inline double truncate_prob(double a, double eps) { return std::clamp(a, eps, 1.0 - eps); }

// Per-coordinate interval set for nuisance marginals (and slopes in the
// conditional case) defining the adversarial regions.
struct AdversarialBox {
  Vec level_lo, level_hi;   // length M
  Matrix slope_lo, slope_hi;  // M x d; empty unconditional
  double cv = 0.0;
  Vec anchor;               // empty unconditional
  bool degenerate = false;  // zero-variance residuals: box collapsed to the fit

  int M() const { return static_cast<int>(level_lo.size()); }
  int d() const { return slope_lo.cols; }
  bool conditional() const { return !slope_lo.empty(); }
};

// Sample-average marginal estimator, truncated into [eps, 1-eps].
inline Vec fit_marginals_unconditional(const std::vector<std::vector<int>>& Y, double eps = kDefaultEpsTrunc) {
  if (Y.empty()) throw std::invalid_argument("fit_marginals_unconditional: empty data");
  const int n = static_cast<int>(Y.size());
  const int M = static_cast<int>(Y[0].size());
  Vec alpha(M, 0.0);
  for (const auto& y : Y)
    for (int j = 0; j < M; ++j) alpha[j] += y[j];
  for (int j = 0; j < M; ++j) alpha[j] = truncate_prob(alpha[j] / n, eps);
  return alpha;
}

// Multiplier-bootstrap box around alpha_hat: cv is the (1-delta)-quantile of
// max_j |(1/n) sum_i xi_i (Y_ij - alpha_j)/s_j| over B standard-normal
// multiplier draws, s_j = sqrt(alpha_j (1-alpha_j)). The box is intersected
// with [eps, 1-eps]^M.
inline AdversarialBox bootstrap_box_unconditional(const std::vector<std::vector<int>>& Y, const Vec& alpha_hat,
                                                  double delta_alpha, int B, std::uint64_t seed,
                                                  double eps = kDefaultEpsTrunc) {
  if (!(delta_alpha > 0.0 && delta_alpha < 1.0))
    throw std::invalid_argument("bootstrap_box_unconditional: delta_alpha must be in (0,1)");
  if (B < 100) throw std::invalid_argument("bootstrap_box_unconditional: B < 100 gives unreliable quantiles");
  const int n = static_cast<int>(Y.size());
  const int M = static_cast<int>(alpha_hat.size());
  Vec s(M);
  for (int j = 0; j < M; ++j) s[j] = std::sqrt(alpha_hat[j] * (1.0 - alpha_hat[j]));
  // residual matrix (Y_ij - alpha_j)/s_j, multiplier draws are reduced over it
  Matrix R(n, M);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < M; ++j) R(i, j) = (Y[i][j] - alpha_hat[j]) / s[j];
  Vec stats(B);
  Rng rng = Rng::derive(seed, 0x626f6f74ULL);
  Vec xi(n);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) xi[i] = rng.normal();
    double worst = 0.0;
    for (int j = 0; j < M; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += xi[i] * R(i, j);
      worst = std::max(worst, std::fabs(acc / n));
    }
    stats[b] = worst;
  }
  AdversarialBox box;
  box.cv = empirical_quantile(stats, 1.0 - delta_alpha);
  box.level_lo.resize(M);
  box.level_hi.resize(M);
  for (int j = 0; j < M; ++j) {
    box.level_lo[j] = truncate_prob(alpha_hat[j] - box.cv * s[j], eps);
    box.level_hi[j] = truncate_prob(alpha_hat[j] + box.cv * s[j], eps);
  }
  return box;
}

inline Matrix to_matrix(const std::vector<std::vector<int>>& Y) {
  Matrix out(static_cast<int>(Y.size()), Y.empty() ? 0 : static_cast<int>(Y[0].size()));
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out(i, j) = Y[i][j];
  return out;
}

// Local-linear marginal fit at an anchor point. Levels truncated; slopes not.
struct LocalLinearFit {
  Vec alpha_hat;    // truncated levels at x, length M
  Matrix beta;      // M x d slopes
  Matrix resid;     // n x M residuals eps_ij = Y_ij - a_j - b_j'(X_i - x)
  Matrix leverage;  // n x (1+d): s_i = (Z'WZ)^{-1} Z_i K_h(X_i - x)
  Matrix s_jl;      // M x (1+d): sqrt((1/n) sum_i eps_ij^2 s_il^2)
  Vec anchor;
};

// Weighted least squares of each Y_{.j} on (1, X_i - x) with kernel weights.
inline LocalLinearFit fit_marginals_local(const Matrix& X, const Matrix& Y, const Vec& x,
                                          const KernelSpec& kernel, double eps = kDefaultEpsTrunc) {
  const int n = X.rows;
  const int d = X.cols;
  if (n == 0 || Y.rows != n) throw std::invalid_argument("fit_marginals_local: bad data");
  const int M = Y.cols;
  const int q = 1 + d;

  Vec kw(n);
  int npos = 0;
  for (int i = 0; i < n; ++i) {
    kw[i] = kernel.kh(X.row(i), x.data());
    if (kw[i] > 0.0) ++npos;
  }
  if (npos < d + 2) throw std::runtime_error("fit_marginals_local: insufficient local data at anchor");

  // Z'WZ (shared across j)
  Matrix ZtWZ(q, q);
  for (int i = 0; i < n; ++i) {
    if (kw[i] == 0.0) continue;
    Vec zi(q);
    zi[0] = 1.0;
    for (int k = 0; k < d; ++k) zi[1 + k] = X(i, k) - x[k];
    for (int a = 0; a < q; ++a)
      for (int b = 0; b < q; ++b) ZtWZ(a, b) += kw[i] * zi[a] * zi[b];
  }
  Matrix Sinv;
  if (!invert(ZtWZ, Sinv))
    throw std::runtime_error("fit_marginals_local: singular local design (insufficient local data)");

  LocalLinearFit fit;
  fit.anchor = x;
  fit.alpha_hat.resize(M);
  fit.beta = Matrix(M, d);
  fit.resid = Matrix(n, M);
  fit.leverage = Matrix(n, q);
  fit.s_jl = Matrix(M, q);

  for (int i = 0; i < n; ++i) {
    Vec zi(q);
    zi[0] = 1.0;
    for (int k = 0; k < d; ++k) zi[1 + k] = X(i, k) - x[k];
    for (int a = 0; a < q; ++a) {
      double acc = 0.0;
      for (int b = 0; b < q; ++b) acc += Sinv(a, b) * zi[b];
      // (Z'WZ/n)^{-1} Z_i K_h convention: coef - coef* = (1/n) sum_i s_i eps_i
      fit.leverage(i, a) = acc * kw[i] * n;
    }
  }

  for (int j = 0; j < M; ++j) {
    Vec rhs(q, 0.0);
    for (int i = 0; i < n; ++i) {
      if (kw[i] == 0.0) continue;
      Vec zi(q);
      zi[0] = 1.0;
      for (int k = 0; k < d; ++k) zi[1 + k] = X(i, k) - x[k];
      for (int a = 0; a < q; ++a) rhs[a] += kw[i] * zi[a] * Y(i, j);
    }
    Vec coef(q, 0.0);
    for (int a = 0; a < q; ++a)
      for (int b = 0; b < q; ++b) coef[a] += Sinv(a, b) * rhs[b];
    fit.alpha_hat[j] = truncate_prob(coef[0], eps);
    for (int k = 0; k < d; ++k) fit.beta(j, k) = coef[1 + k];
    for (int i = 0; i < n; ++i) {
      double pred = coef[0];
      for (int k = 0; k < d; ++k) pred += coef[1 + k] * (X(i, k) - x[k]);
      fit.resid(i, j) = Y(i, j) - pred;
    }
    for (int l = 0; l < q; ++l) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += fit.resid(i, j) * fit.resid(i, j) * fit.leverage(i, l) * fit.leverage(i, l);
      fit.s_jl(j, l) = std::sqrt(acc / n);
    }
  }
  return fit;
}

// Conditional box over (level, slope) coefficients: the adversarial marginal
// functions are affine in X - x. cv is the multiplier-bootstrap quantile of
// max_{j,l} |(1/n) sum_i xi_i eps_ij s_il / s_jl|.
inline AdversarialBox bootstrap_box_local(const LocalLinearFit& fit, double delta_alpha, int B, std::uint64_t seed,
                                          double eps = kDefaultEpsTrunc) {
  if (!(delta_alpha > 0.0 && delta_alpha < 1.0))
    throw std::invalid_argument("bootstrap_box_local: delta_alpha must be in (0,1)");
  if (B < 100) throw std::invalid_argument("bootstrap_box_local: B < 100 gives unreliable quantiles");
  const int n = fit.resid.rows;
  const int M = static_cast<int>(fit.alpha_hat.size());
  const int q = fit.leverage.cols;
  const int d = q - 1;

  AdversarialBox box;
  box.anchor = fit.anchor;
  box.level_lo.resize(M);
  box.level_hi.resize(M);
  box.slope_lo = Matrix(M, d);
  box.slope_hi = Matrix(M, d);

  double s_min = std::numeric_limits<double>::infinity();
  for (int j = 0; j < M; ++j)
    for (int l = 0; l < q; ++l) s_min = std::min(s_min, fit.s_jl(j, l));
  if (s_min <= 0.0) {
    // zero-variance residuals: cv undefined, collapse to the point fit
    box.degenerate = true;
    box.cv = 0.0;
    for (int j = 0; j < M; ++j) {
      box.level_lo[j] = box.level_hi[j] = fit.alpha_hat[j];
      for (int k = 0; k < d; ++k) box.slope_lo(j, k) = box.slope_hi(j, k) = fit.beta(j, k);
    }
    return box;
  }

  Vec stats(B);
  Rng rng = Rng::derive(seed, 0x6c6f63626fULL);
  Vec xi(n);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < n; ++i) xi[i] = rng.normal();
    double worst = 0.0;
    for (int j = 0; j < M; ++j) {
      for (int l = 0; l < q; ++l) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += xi[i] * fit.resid(i, j) * fit.leverage(i, l);
        worst = std::max(worst, std::fabs(acc / (n * fit.s_jl(j, l))));
      }
    }
    stats[b] = worst;
  }
  box.cv = empirical_quantile(stats, 1.0 - delta_alpha);
  for (int j = 0; j < M; ++j) {
    box.level_lo[j] = truncate_prob(fit.alpha_hat[j] - box.cv * fit.s_jl(j, 0), eps);
    box.level_hi[j] = truncate_prob(fit.alpha_hat[j] + box.cv * fit.s_jl(j, 0), eps);
    for (int k = 0; k < d; ++k) {
      box.slope_lo(j, k) = fit.beta(j, k) - box.cv * fit.s_jl(j, 1 + k);
      box.slope_hi(j, k) = fit.beta(j, k) + box.cv * fit.s_jl(j, 1 + k);
    }
  }
  return box;
}

}  // namespace bahadur
