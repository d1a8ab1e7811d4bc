#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bahadur/bundle.hpp"
#include "bahadur/linalg.hpp"
#include "bahadur/marginals.hpp"
#include "bahadur/rng.hpp"

namespace bahadur {

struct PenaltySpec {
  double lambda = 0.0;
  Vec w;  // strictly positive, length = coefficient dimension

  void validate(int dim) const {
    if (lambda < 0.0) throw std::invalid_argument("PenaltySpec: lambda must be nonnegative");
    if (static_cast<int>(w.size()) != dim) throw std::invalid_argument("PenaltySpec: weight length mismatch");
    for (double v : w)
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("PenaltySpec: weights must be positive finite");
  }

  double value(const Vec& r) const {
    double s = 0.0;
    for (size_t j = 0; j < r.size(); ++j) s += w[j] * std::fabs(r[j]);
    return lambda * s;
  }
};

struct SolverOptions {
  int max_iters = 20000;
  double abs_tol = 1e-9;        // on objective change and prox residual
  double rel_tol = 1e-13;       // on parameter change
  double backtrack = 0.5;
  double initial_step = 1.0;
  double feas_margin = 1e-8;    // min_i 1 + W_i'r must stay above this
  double kkt_tol = 1e-6;        // residual bound when the line search stalls
};

struct FitResult {
  Vec r;
  double objective = 0.0;       // penalized objective at r
  int iterations = 0;
  bool converged = false;
  int active_vertex = 0;        // argmin candidate of the inner problem
  double min_factor = 0.0;      // min_i 1 + W_i'r over the active candidate
  bool heuristic = false;       // set by the approximate adversarial solver
};

namespace detail {

struct SmoothEval {
  double value = 0.0;
  bool feasible = false;
  int active = 0;
  double min_factor = 0.0;
};

// Smooth part: min over candidate feature matrices F_v of
// sum_i omega_i log(1 + F_v[i]'r). Ties broken by lowest candidate index.
class EnumerationObjective {
 public:
  EnumerationObjective(std::vector<Matrix> candidates, Vec obs_w, double margin)
      : cand_(std::move(candidates)), obs_w_(std::move(obs_w)), margin_(margin) {
    if (cand_.empty()) throw std::invalid_argument("EnumerationObjective: no candidates");
    dim_ = cand_[0].cols;
    n_ = cand_[0].rows;
  }

  int dim() const { return dim_; }
  int candidates() const { return static_cast<int>(cand_.size()); }

  SmoothEval eval(const Vec& r) const {
    SmoothEval best;
    best.value = std::numeric_limits<double>::infinity();
    for (size_t v = 0; v < cand_.size(); ++v) {
      double val = 0.0;
      double minf = std::numeric_limits<double>::infinity();
      bool ok = true;
      for (int i = 0; i < n_; ++i) {
        double f = 1.0 + dot(cand_[v].row(i), r.data(), dim_);
        minf = std::min(minf, f);
        if (f <= margin_) {
          ok = false;
          break;
        }
        val += obs_w_[i] * std::log(f);
      }
      if (!ok) {
        best.feasible = false;
        best.active = static_cast<int>(v);
        best.min_factor = minf;
        best.value = -std::numeric_limits<double>::infinity();
        return best;
      }
      if (val < best.value) {
        best.value = val;
        best.active = static_cast<int>(v);
        best.min_factor = minf;
      }
    }
    best.feasible = true;
    return best;
  }

  void gradient(const Vec& r, int active, Vec& g) const {
    const Matrix& F = cand_[active];
    g.assign(dim_, 0.0);
    for (int i = 0; i < n_; ++i) {
      double f = 1.0 + dot(F.row(i), r.data(), dim_);
      double c = obs_w_[i] / f;
      const double* row = F.row(i);
      for (int j = 0; j < dim_; ++j) g[j] += c * row[j];
    }
  }

  // Negative Hessian restricted to the active coordinates (positive definite
  // on the feasible region).
  Matrix neg_hessian_active(const Vec& r, int active, const std::vector<int>& act) const {
    const Matrix& F = cand_[active];
    const int m = static_cast<int>(act.size());
    Matrix H(m, m);
    for (int i = 0; i < n_; ++i) {
      double f = 1.0 + dot(F.row(i), r.data(), dim_);
      double c = obs_w_[i] / (f * f);
      const double* row = F.row(i);
      for (int a = 0; a < m; ++a)
        for (int b = a; b < m; ++b) H(a, b) += c * row[act[a]] * row[act[b]];
    }
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < a; ++b) H(a, b) = H(b, a);
    return H;
  }

 private:
  std::vector<Matrix> cand_;
  Vec obs_w_;
  double margin_;
  int dim_ = 0;
  int n_ = 0;
};

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

// Proximal (sub)gradient ascent with backtracking; objective is concave in r
// on the feasible region and every accepted step is nondecreasing.
inline FitResult prox_solve(const EnumerationObjective& obj, const PenaltySpec& pen, const SolverOptions& opt) {
  const int p = obj.dim();
  pen.validate(p);
  FitResult res;
  res.r.assign(p, 0.0);
  SmoothEval se = obj.eval(res.r);  // r = 0 is always strictly feasible
  double composite = se.value - pen.value(res.r);
  double t = opt.initial_step;
  Vec g(p), cand(p);
  int stall = 0;  // consecutive accepted steps with no objective progress

  for (int it = 0; it < opt.max_iters; ++it) {
    res.iterations = it + 1;
    obj.gradient(res.r, se.active, g);
    bool accepted = false;
    SmoothEval se_new;
    double composite_new = composite;
    while (t >= 1e-18) {
      for (int j = 0; j < p; ++j) cand[j] = soft_threshold(res.r[j] + t * g[j], t * pen.lambda * pen.w[j]);
      se_new = obj.eval(cand);
      if (se_new.feasible) {
        composite_new = se_new.value - pen.value(cand);
        if (composite_new >= composite - 1e-14 * (1.0 + std::fabs(composite))) {
          accepted = true;
          break;
        }
      }
      t *= opt.backtrack;
    }
    if (!accepted) break;  // no improving feasible step at any tiny step size

    double move = 0.0;
    for (int j = 0; j < p; ++j) move = std::max(move, std::fabs(cand[j] - res.r[j]));
    double dobj = std::fabs(composite_new - composite);
    res.r = cand;
    se = se_new;
    composite = composite_new;
    if ((dobj <= opt.abs_tol && move / t <= opt.kkt_tol) || move <= opt.rel_tol * (1.0 + norm_inf(res.r))) {
      res.converged = true;
      break;
    }
    // A minimax tie can let the iterate wander between vertices with the
    // objective pinned in place; cut the loop once progress has stopped and
    // let the KKT check below decide convergence.
    if (dobj <= opt.abs_tol) {
      if (++stall >= 200) break;
    } else {
      stall = 0;
    }
    t = std::min(t * 1.6, 1e6);
  }
  auto kkt_resid = [&](const Vec& r, int active) {
    obj.gradient(r, active, g);
    double resid = 0.0;
    for (int j = 0; j < p; ++j) {
      if (r[j] != 0.0)
        resid = std::max(resid, std::fabs(g[j] - pen.lambda * pen.w[j] * (r[j] > 0 ? 1.0 : -1.0)));
      else
        resid = std::max(resid, std::max(0.0, std::fabs(g[j]) - pen.lambda * pen.w[j]));
    }
    return resid;
  };

  // Active-set Newton polish: the prox iteration stalls near sqrt(eps)
  // accuracy because objective improvements vanish in rounding; Newton on the
  // smooth stationarity system pushes the residual to ~1e-12.
  {
    std::vector<int> act;
    for (int j = 0; j < p; ++j)
      if (res.r[j] != 0.0) act.push_back(j);
    double best_resid = kkt_resid(res.r, se.active);
    if (!act.empty()) {
      Vec r_best = res.r, r_try = res.r;
      SmoothEval se_best = se;
      const int m = static_cast<int>(act.size());
      for (int pass = 0; pass < 30 && best_resid > 1e-13; ++pass) {
        obj.gradient(r_best, se_best.active, g);
        Vec rhs(m);
        for (int a = 0; a < m; ++a)
          rhs[a] = g[act[a]] - pen.lambda * pen.w[act[a]] * (r_best[act[a]] > 0 ? 1.0 : -1.0);
        Matrix H = obj.neg_hessian_active(r_best, se_best.active, act);
        Vec step;
        if (!solve_linear(H, rhs, step)) break;
        double scale = 1.0;
        bool improved = false;
        for (int half = 0; half < 20 && !improved; ++half, scale *= 0.5) {
          r_try = r_best;
          bool sign_ok = true;
          for (int a = 0; a < m; ++a) {
            r_try[act[a]] += scale * step[a];
            if (r_try[act[a]] * r_best[act[a]] <= 0.0) sign_ok = false;
          }
          if (!sign_ok) continue;
          SmoothEval se_try = obj.eval(r_try);
          if (!se_try.feasible || se_try.active != se_best.active) continue;
          double resid_try = kkt_resid(r_try, se_try.active);
          if (resid_try < best_resid) {
            best_resid = resid_try;
            r_best = r_try;
            se_best = se_try;
            improved = true;
          }
        }
        if (!improved) break;
      }
      double comp_best = obj.eval(r_best).value - pen.value(r_best);
      if (comp_best >= composite - 1e-12 * (1.0 + std::fabs(composite))) {
        res.r = r_best;
        se = se_best;
        composite = comp_best;
      } else {
        best_resid = kkt_resid(res.r, se.active);
      }
    }
    if (!res.converged) res.converged = best_resid <= opt.kkt_tol;
  }

  res.objective = composite;
  res.active_vertex = se.active;
  res.min_factor = se.min_factor;
  return res;
}

}  // namespace detail

// Smallest lambda at which the plug-in fit is exactly zero:
// max_j |sum_i omega_i W_ij| / w_j.
inline double kill_threshold(const Matrix& W, const Vec& w, const Vec* obs_w = nullptr) {
  const int n = W.rows, p = W.cols;
  double thr = 0.0;
  for (int j = 0; j < p; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += (obs_w ? (*obs_w)[i] : 1.0 / n) * W(i, j);
    thr = std::max(thr, std::fabs(s) / w[j]);
  }
  return thr;
}

// Plug-in estimator: maximizes sum_i omega_i log(1 + W_i'r) - lambda ||r||_{1,w}
// with omega_i = 1/n by default.
inline FitResult fit_plugin(const Matrix& W, const PenaltySpec& pen, const SolverOptions& opt = {},
                            const Vec* obs_w = nullptr) {
  Vec ow = obs_w ? *obs_w : Vec(W.rows, 1.0 / W.rows);
  detail::EnumerationObjective obj({W}, std::move(ow), opt.feas_margin);
  return detail::prox_solve(obj, pen, opt);
}

namespace detail {

inline std::vector<Matrix> fo_vertex_features(const Matrix& W_hat, const std::vector<Matrix>& grad_w,
                                              const Vec& alpha_hat, const AdversarialBox& box) {
  const int n = W_hat.rows, p = W_hat.cols;
  const int M = static_cast<int>(alpha_hat.size());
  if (M > 12) throw std::invalid_argument("fit_first_order: vertex enumeration guard exceeded (M > 12)");
  double width = 0.0;
  for (int j = 0; j < M; ++j) width = std::max(width, box.level_hi[j] - box.level_lo[j]);
  if (width < 1e-15) return {W_hat};  // degenerate adversary
  std::vector<Matrix> cands;
  cands.reserve(1u << M);
  Vec delta(M);
  for (std::uint32_t mask = 0; mask < (1u << M); ++mask) {
    for (int j = 0; j < M; ++j) delta[j] = ((mask >> j) & 1u ? box.level_hi[j] : box.level_lo[j]) - alpha_hat[j];
    Matrix F = W_hat;
    for (int i = 0; i < n; ++i) {
      const Matrix& G = grad_w[i];
      double* row = F.row(i);
      for (int l = 0; l < p; ++l) row[l] += dot(G.row(l), delta.data(), M);
    }
    cands.push_back(std::move(F));
  }
  return cands;
}

}  // namespace detail

// First-order adversarial estimator (linearized nuisance impact): maximizes
// the minimum over the 2^M box vertices of the linearized log-likelihood,
// minus the weighted-L1 penalty. Inner minimum is exact by enumeration.
inline FitResult fit_first_order(const Matrix& W_hat, const std::vector<Matrix>& grad_w, const Vec& alpha_hat,
                                 const AdversarialBox& box, const PenaltySpec& pen, const SolverOptions& opt = {},
                                 const Vec* obs_w = nullptr) {
  if (box.level_lo.empty()) throw std::invalid_argument("fit_first_order: empty box");
  Vec ow = obs_w ? *obs_w : Vec(W_hat.rows, 1.0 / W_hat.rows);
  detail::EnumerationObjective obj(detail::fo_vertex_features(W_hat, grad_w, alpha_hat, box), std::move(ow),
                                   opt.feas_margin);
  return detail::prox_solve(obj, pen, opt);
}

// Candidate nuisance evaluations for the approximate adversarial solver:
// the box vertices plus Q seeded interior points.
inline std::vector<Matrix> adversarial_candidates(const std::vector<std::vector<int>>& Y, const Vec& alpha_hat,
                                                  const AdversarialBox& box, const BundleIndex& index, int Q,
                                                  std::uint64_t seed) {
  const int M = index.M;
  if (M > 12) throw std::invalid_argument("fit_adversarial_approx: vertex enumeration guard exceeded (M > 12)");
  double width = 0.0;
  for (int j = 0; j < M; ++j) width = std::max(width, box.level_hi[j] - box.level_lo[j]);
  std::vector<Matrix> cands;
  if (width < 1e-15) {
    cands.push_back(w_matrix(Y, alpha_hat, index));
    return cands;
  }
  Vec a(M);
  for (std::uint32_t mask = 0; mask < (1u << M); ++mask) {
    for (int j = 0; j < M; ++j) a[j] = (mask >> j) & 1u ? box.level_hi[j] : box.level_lo[j];
    cands.push_back(w_matrix(Y, a, index));
  }
  Rng rng = Rng::derive(seed, 0x61647633ULL);
  for (int q = 0; q < Q; ++q) {
    for (int j = 0; j < M; ++j) a[j] = box.level_lo[j] + rng.uniform() * (box.level_hi[j] - box.level_lo[j]);
    cands.push_back(w_matrix(Y, a, index));
  }
  return cands;
}

// min over candidate feature sets of sum_i omega_i log(1 + F_v[i]'r);
// -inf when some candidate is infeasible at r.
inline double smooth_min_value(const std::vector<Matrix>& cands, const Vec& obs_w, const Vec& r,
                               double margin = 0.0) {
  detail::EnumerationObjective obj(cands, obs_w, margin);
  auto se = obj.eval(r);
  return se.feasible ? se.value : -std::numeric_limits<double>::infinity();
}

// Approximate solver for the full adversarial estimator. The inner problem is
// non-convex in alpha; we evaluate the box vertices plus Q seeded interior
// points and take the minimum. Result is flagged heuristic.
inline FitResult fit_adversarial_approx(const std::vector<std::vector<int>>& Y, const Vec& alpha_hat,
                                        const AdversarialBox& box, const BundleIndex& index, const PenaltySpec& pen,
                                        const SolverOptions& opt = {}, int Q = 64, std::uint64_t seed = 0) {
  Vec ow(static_cast<int>(Y.size()), 1.0 / static_cast<double>(Y.size()));
  detail::EnumerationObjective obj(adversarial_candidates(Y, alpha_hat, box, index, Q, seed), std::move(ow),
                                   opt.feas_margin);
  FitResult res = detail::prox_solve(obj, pen, opt);
  res.heuristic = true;
  return res;
}

}  // namespace bahadur
