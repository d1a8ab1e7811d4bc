#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bahadur/bundle.hpp"
#include "bahadur/kernel.hpp"
#include "bahadur/linalg.hpp"
#include "bahadur/marginals.hpp"
#include "bahadur/solver.hpp"

namespace bahadur {

// Data prepared for a localized fit at one anchor. Only observations with a
// positive kernel weight are kept; obs_w already carries the 1/N factor of
// the full sample so dropped rows change nothing.
struct LocalDesign {
  Vec anchor;
  KernelSpec kernel;
  Vec obs_w;                   // K_h(X_i - x) / N over retained observations
  Matrix W;                    // n_loc x p features at alpha_hat(X_i)
  std::vector<Matrix> grad_w;  // per-observation p x M gradients at alpha_hat(X_i)
  Matrix U;                    // n_loc x d scaled regressors (X_i - x)/h
  Matrix alpha_at;             // n_loc x M marginal estimates alpha_hat(X_i)
  int p() const { return W.cols; }
  int d() const { return U.cols; }
  int dim() const { return W.cols * (1 + U.cols); }  // level block + slope block
};

// alpha_hat(X_i) by a separate local-linear marginal fit at every observation.
inline Matrix local_marginal_features(const Matrix& X, const Matrix& Y, const KernelSpec& kernel,
                                      double eps = kDefaultEpsTrunc) {
  Matrix out(X.rows, Y.cols);
  Vec xi(X.cols);
  for (int i = 0; i < X.rows; ++i) {
    for (int k = 0; k < X.cols; ++k) xi[k] = X(i, k);
    auto fit = fit_marginals_local(X, Y, xi, kernel, eps);
    for (int j = 0; j < Y.cols; ++j) out(i, j) = fit.alpha_hat[j];
  }
  return out;
}

inline LocalDesign build_local_design(const Matrix& X, const std::vector<std::vector<int>>& Y, const Vec& x,
                                      const KernelSpec& kernel, const BundleIndex& index, const Matrix& alpha_at) {
  const int n = X.rows;
  const int d = X.cols;
  const int M = index.M;
  if (static_cast<int>(Y.size()) != n || alpha_at.rows != n || alpha_at.cols != M)
    throw std::invalid_argument("build_local_design: dimension mismatch");

  LocalDesign des;
  des.anchor = x;
  des.kernel = kernel;
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (kernel.kh(X.row(i), x.data()) > 0.0) keep.push_back(i);
  if (keep.empty()) throw std::runtime_error("build_local_design: no observations in bandwidth at anchor");

  const int m = static_cast<int>(keep.size());
  des.obs_w.resize(m);
  des.W = Matrix(m, index.p());
  des.U = Matrix(m, d);
  des.alpha_at = Matrix(m, M);
  des.grad_w.reserve(m);
  Vec ai(M);
  for (int t = 0; t < m; ++t) {
    int i = keep[t];
    des.obs_w[t] = kernel.kh(X.row(i), x.data()) / n;
    for (int j = 0; j < M; ++j) {
      ai[j] = alpha_at(i, j);
      des.alpha_at(t, j) = ai[j];
    }
    Vec w = w_vector(Y[i], ai, index);
    for (int l = 0; l < index.p(); ++l) des.W(t, l) = w[l];
    des.grad_w.push_back(gradient_w_alpha(Y[i], ai, index));
    for (int k = 0; k < d; ++k) des.U(t, k) = (X(i, k) - x[k]) / kernel.h;
  }
  return des;
}

// Penalty on (a, h*b): level weights per bundle, slope weights per bundle and
// covariate direction.
struct LocalPenaltySpec {
  double lambda = 0.0;
  Vec w_level;     // length p
  Matrix w_slope;  // p x d

  PenaltySpec flatten(int p, int d) const {
    if (static_cast<int>(w_level.size()) != p || w_slope.rows != p || w_slope.cols != d)
      throw std::invalid_argument("LocalPenaltySpec: weight dimension mismatch");
    PenaltySpec pen;
    pen.lambda = lambda;
    pen.w.resize(p * (1 + d));
    for (int k = 0; k < p; ++k) {
      pen.w[k] = w_level[k];
      for (int j = 0; j < d; ++j) pen.w[p + k * d + j] = w_slope(k, j);
    }
    return pen;
  }
};

struct LocalFit {
  Vec a;       // level coefficients, length p
  Matrix b;    // p x d slopes (already divided by h)
  Vec anchor;
  double h = 0.0;
  FitResult solve;  // diagnostics in the (a, h*b) parameterization
};

namespace detail {

// Stacked features [W_i, W_i (x) u_i] so that F_i' rho = W_i'(a + b(X_i - x))
// with rho = (a, h*b) and u_i = (X_i - x)/h.
inline Matrix stack_features(const Matrix& W, const Matrix& U) {
  const int n = W.rows, p = W.cols, d = U.cols;
  Matrix F(n, p * (1 + d));
  for (int i = 0; i < n; ++i) {
    double* row = F.row(i);
    for (int k = 0; k < p; ++k) {
      row[k] = W(i, k);
      for (int j = 0; j < d; ++j) row[p + k * d + j] = W(i, k) * U(i, j);
    }
  }
  return F;
}

inline LocalFit unpack_local(FitResult res, const LocalDesign& des) {
  const int p = des.p(), d = des.d();
  LocalFit fit;
  fit.anchor = des.anchor;
  fit.h = des.kernel.h;
  fit.a.assign(res.r.begin(), res.r.begin() + p);
  fit.b = Matrix(p, d);
  for (int k = 0; k < p; ++k)
    for (int j = 0; j < d; ++j) fit.b(k, j) = res.r[p + k * d + j] / des.kernel.h;
  fit.solve = std::move(res);
  return fit;
}

}  // namespace detail

inline LocalFit fit_local_plugin(const LocalDesign& des, const LocalPenaltySpec& pen, const SolverOptions& opt = {}) {
  Matrix F = detail::stack_features(des.W, des.U);
  detail::EnumerationObjective obj({std::move(F)}, des.obs_w, opt.feas_margin);
  FitResult res = detail::prox_solve(obj, pen.flatten(des.p(), des.d()), opt);
  return detail::unpack_local(std::move(res), des);
}

inline constexpr int kLocalVertexGuardBits = 20;

namespace detail {

// Linearized features at one affine nuisance vertex (abar, bbar):
// W_i + grad_w_i' (abar + bbar (X_i - x) - alpha_hat(X_i)), stacked.
inline Matrix local_vertex_features(const LocalDesign& des, const Vec& abar, const Matrix& bbar) {
  const int n = des.W.rows, p = des.p(), d = des.d(), M = des.alpha_at.cols;
  Matrix Wt = des.W;
  Vec delta(M);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < M; ++j) {
      delta[j] = abar[j] - des.alpha_at(i, j);
      for (int k = 0; k < d; ++k) delta[j] += bbar(j, k) * des.U(i, k) * des.kernel.h;
    }
    const Matrix& G = des.grad_w[i];
    double* row = Wt.row(i);
    for (int l = 0; l < p; ++l) row[l] += dot(G.row(l), delta.data(), M);
  }
  return stack_features(Wt, des.U);
}

// Coordinate screening: pick, one nuisance coordinate at a time, the box
// endpoint that minimizes the r = 0 linearized objective's local slope proxy
// (the kernel-weighted mean feature response). Heuristic single candidate.
inline Matrix screened_vertex_features(const LocalDesign& des, const AdversarialBox& box) {
  const int M = static_cast<int>(box.level_lo.size());
  const int d = des.d();
  Vec abar(M);
  Matrix bbar(M, d);
  for (int j = 0; j < M; ++j) {
    abar[j] = box.level_lo[j];
    for (int k = 0; k < d; ++k) bbar(j, k) = box.slope_lo(j, k);
  }
  auto objective_at_zero_grad = [&](void) {
    // surrogate: squared norm of the weighted mean feature vector; smaller
    // mean signal = harder adversary for the penalized fit
    Matrix F = local_vertex_features(des, abar, bbar);
    Vec g(F.cols, 0.0);
    for (int i = 0; i < F.rows; ++i)
      for (int c = 0; c < F.cols; ++c) g[c] += des.obs_w[i] * F(i, c);
    double s = 0.0;
    for (double v : g) s += v * v;
    return s;
  };
  double best = objective_at_zero_grad();
  for (int pass = 0; pass < 2; ++pass) {
    for (int j = 0; j < M; ++j) {
      for (int k = -1; k < d; ++k) {
        double saved = k < 0 ? abar[j] : bbar(j, k);
        double lo = k < 0 ? box.level_lo[j] : box.slope_lo(j, k);
        double hi = k < 0 ? box.level_hi[j] : box.slope_hi(j, k);
        for (double cand : {lo, hi}) {
          if (cand == saved) continue;
          (k < 0 ? abar[j] : bbar(j, k)) = cand;
          double val = objective_at_zero_grad();
          if (val < best) {
            best = val;
            saved = cand;
          } else {
            (k < 0 ? abar[j] : bbar(j, k)) = saved;
          }
        }
      }
    }
  }
  return local_vertex_features(des, abar, bbar);
}

// Merges observations with identical (covariate, outcome) rows, summing their
// kernel weights. The likelihood only sees features and weights, and distinct
// (X_i, Y_i) always produce distinct (U_i, W_i) rows, so the aggregated design
// yields the same objective with far fewer rows on discrete covariate designs.
inline LocalDesign aggregate_duplicate_rows(const LocalDesign& des) {
  const int n = des.W.rows, p = des.W.cols, d = des.U.cols;
  std::vector<int> group;       // group index per retained row
  std::vector<int> rep;         // representative source row per group
  group.reserve(n);
  for (int i = 0; i < n; ++i) {
    int found = -1;
    for (int g = 0; g < static_cast<int>(rep.size()) && found < 0; ++g) {
      int j = rep[g];
      bool same = true;
      for (int k = 0; k < d && same; ++k) same = des.U(i, k) == des.U(j, k);
      for (int l = 0; l < p && same; ++l) same = des.W(i, l) == des.W(j, l);
      if (same) found = g;
    }
    if (found < 0) {
      found = static_cast<int>(rep.size());
      rep.push_back(i);
    }
    group.push_back(found);
  }
  if (rep.size() == static_cast<size_t>(n)) return des;

  LocalDesign out;
  out.anchor = des.anchor;
  out.kernel = des.kernel;
  const int m = static_cast<int>(rep.size());
  out.obs_w.assign(m, 0.0);
  out.W = Matrix(m, p);
  out.U = Matrix(m, d);
  out.alpha_at = Matrix(m, des.alpha_at.cols);
  out.grad_w.reserve(m);
  for (int g = 0; g < m; ++g) {
    int i = rep[g];
    for (int l = 0; l < p; ++l) out.W(g, l) = des.W(i, l);
    for (int k = 0; k < d; ++k) out.U(g, k) = des.U(i, k);
    for (int j = 0; j < des.alpha_at.cols; ++j) out.alpha_at(g, j) = des.alpha_at(i, j);
    out.grad_w.push_back(des.grad_w[i]);
  }
  for (int i = 0; i < n; ++i) out.obs_w[group[i]] += des.obs_w[i];
  return out;
}

}  // namespace detail

// First-order localized estimator: exact inner minimum over the 2^{M(1+d)}
// vertices of the conditional box (affine nuisance family). When the vertex
// count exceeds the guard, set allow_screening to accept a single screened
// candidate instead (result flagged heuristic).
inline LocalFit fit_local_first_order(const LocalDesign& des_in, const AdversarialBox& box,
                                      const LocalPenaltySpec& pen, const SolverOptions& opt = {},
                                      bool allow_screening = false) {
  const LocalDesign des = detail::aggregate_duplicate_rows(des_in);
  const int M = static_cast<int>(box.level_lo.size());
  const int d = des.d();
  if (box.slope_lo.rows != M || box.slope_lo.cols != d)
    throw std::invalid_argument("fit_local_first_order: box/design dimension mismatch");

  double width = 0.0;
  for (int j = 0; j < M; ++j) {
    width = std::max(width, box.level_hi[j] - box.level_lo[j]);
    for (int k = 0; k < d; ++k) width = std::max(width, box.slope_hi(j, k) - box.slope_lo(j, k));
  }

  std::vector<Matrix> cands;
  bool heuristic = false;
  if (width < 1e-15) {
    cands.push_back(detail::stack_features(des.W, des.U));
  } else {
    const int bits = M * (1 + d);
    if (bits > kLocalVertexGuardBits) {
      if (!allow_screening)
        throw std::invalid_argument(
            "fit_local_first_order: 2^{M(1+d)} vertex enumeration exceeds guard; "
            "enable coordinate screening (allow_screening) for a heuristic inner minimum");
      cands.push_back(detail::screened_vertex_features(des, box));
      heuristic = true;
    } else {
      Vec abar(M);
      Matrix bbar(M, d);
      cands.reserve(1u << bits);
      for (std::uint32_t mask = 0; mask < (1u << bits); ++mask) {
        for (int j = 0; j < M; ++j) {
          abar[j] = (mask >> j) & 1u ? box.level_hi[j] : box.level_lo[j];
          for (int k = 0; k < d; ++k)
            bbar(j, k) = (mask >> (M + j * d + k)) & 1u ? box.slope_hi(j, k) : box.slope_lo(j, k);
        }
        cands.push_back(detail::local_vertex_features(des, abar, bbar));
      }
    }
  }
  detail::EnumerationObjective obj(std::move(cands), des.obs_w, opt.feas_margin);
  FitResult res = detail::prox_solve(obj, pen.flatten(des.p(), d), opt);
  res.heuristic = heuristic;
  return detail::unpack_local(std::move(res), des);
}

inline Vec predict_r(const LocalFit& fit, const Vec& x_query) {
  const int p = static_cast<int>(fit.a.size());
  const int d = fit.b.cols;
  if (static_cast<int>(x_query.size()) != d) throw std::invalid_argument("predict_r: query dimension mismatch");
  Vec out = fit.a;
  for (int k = 0; k < p; ++k)
    for (int j = 0; j < d; ++j) out[k] += fit.b(k, j) * (x_query[j] - fit.anchor[j]);
  return out;
}

}  // namespace bahadur
