#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bundle.hpp"
#include "localized.hpp"
#include "marginals.hpp"
#include "stats.hpp"
#include "tuning.hpp"

namespace bahadur {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct CausalDataset {
  Vec O;                            // n outcomes
  std::vector<std::vector<int>> T;  // n binary treatment vectors, length M
  Matrix X;                         // n x d covariates

  int n() const { return static_cast<int>(O.size()); }
  int M() const { return T.empty() ? 0 : static_cast<int>(T[0].size()); }
  int d() const { return X.cols; }

  void validate() const {
    const int nn = n();
    if (nn == 0) throw std::invalid_argument("CausalDataset: empty");
    if (static_cast<int>(T.size()) != nn || X.rows != nn)
      throw std::invalid_argument("CausalDataset: row counts disagree");
    const int m = M();
    for (const auto& t : T) {
      if (static_cast<int>(t.size()) != m)
        throw std::invalid_argument("CausalDataset: ragged treatment matrix");
      for (int v : t)
        if (v != 0 && v != 1) throw std::invalid_argument("CausalDataset: treatments must be binary");
    }
  }

  // Levels (by outcome code) observed fewer than twice; informational flag.
  std::vector<std::uint32_t> rare_levels() const {
    std::vector<int> count(1u << M(), 0);
    for (const auto& t : T) ++count[encode_outcome(t)];
    std::vector<std::uint32_t> rare;
    for (std::uint32_t c = 0; c < count.size(); ++c)
      if (count[c] < 2) rare.push_back(c);
    return rare;
  }
};

// ---------------------------------------------------------------------------
// Generalized propensity scores
// ---------------------------------------------------------------------------

enum class GpsMethod { FO, Plugin, NW, MNL };

inline const char* gps_method_name(GpsMethod m) {
  switch (m) {
    case GpsMethod::FO: return "fo";
    case GpsMethod::Plugin: return "plugin";
    case GpsMethod::NW: return "nw";
    case GpsMethod::MNL: return "mnl";
  }
  return "?";
}

struct GpsConfig {
  KernelSpec kernel;      // FO / Plugin / NW only
  Matrix anchors;         // g x d evaluation grid (nearest-anchor lookup)
  double lambda = 0.0;    // L1 level for FO / Plugin
  double eps_prop = 1e-3;  // clamp for predicted propensities
  double eps_trunc = kDefaultEpsTrunc;
  double delta_box = 0.05;  // nuisance-box level for FO
  int bootstrap_B = 200;
  std::uint64_t seed = 1;
  SolverOptions solver;
  int mnl_max_iters = 2000;
  double mnl_tol = 1e-7;
  double mnl_ridge = 1e-6;
};

struct GpsFoldFit {
  Matrix alpha;        // g x M marginals at anchors (model-based methods)
  std::vector<Vec> r;  // per-anchor interaction coefficients, length p
  Matrix mnl_coef;     // 2^M x (1+d) softmax coefficients (MNL only)
  bool mnl_converged = true;
};

struct GPSModel {
  GpsMethod method = GpsMethod::Plugin;
  double eps_prop = 1e-3;
  int M = 0;
  Matrix anchors;             // g x d
  BundleIndex index;          // bundles for M
  std::vector<int> fold_of;   // fold label per training row
  std::vector<GpsFoldFit> folds;
  double max_norm_error = 0.0;  // worst |sum_t e_t - 1| before clamping, over fits
  bool heuristic = false;       // any inner solve fell back to a heuristic

  int n_folds() const { return static_cast<int>(folds.size()); }

  int nearest_anchor(const Vec& x) const {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int g = 0; g < anchors.rows; ++g) {
      double s = 0.0;
      for (int k = 0; k < anchors.cols; ++k) {
        double v = x[k] - anchors(g, k);
        s += v * v;
      }
      if (s < bd) {
        bd = s;
        best = g;
      }
    }
    return best;
  }

  // Pre-clamp propensity table over all 2^M levels at x, from the model
  // fitted without fold k. Sums to 1 within numerical error.
  Vec propensity_table_raw(int fold, const Vec& x) const {
    if (fold < 0 || fold >= n_folds()) throw std::out_of_range("GPSModel: bad fold");
    const GpsFoldFit& f = folds[fold];
    const std::uint32_t L = 1u << M;
    Vec table(L);
    if (method == GpsMethod::MNL) {
      Vec eta(L);
      double emax = -std::numeric_limits<double>::infinity();
      const int dcov = f.mnl_coef.cols - 1;
      for (std::uint32_t c = 0; c < L; ++c) {
        double v = f.mnl_coef(static_cast<int>(c), 0);
        for (int k = 0; k < dcov; ++k) v += f.mnl_coef(static_cast<int>(c), 1 + k) * x[k];
        eta[c] = v;
        emax = std::max(emax, v);
      }
      double z = 0.0;
      for (std::uint32_t c = 0; c < L; ++c) z += std::exp(eta[c] - emax);
      for (std::uint32_t c = 0; c < L; ++c) table[c] = std::exp(eta[c] - emax) / z;
      return table;
    }
    const int g = nearest_anchor(x);
    JointModel model;
    model.alpha.resize(M);
    for (int j = 0; j < M; ++j) model.alpha[j] = f.alpha(g, j);
    model.r = f.r[g];
    model.index = index;
    for (std::uint32_t c = 0; c < L; ++c) table[c] = pmf(model, decode_outcome(c, M));
    return table;
  }

  Vec propensity_table(int fold, const Vec& x) const {
    Vec table = propensity_table_raw(fold, x);
    for (double& v : table) v = std::clamp(v, eps_prop, 1.0 - eps_prop);
    return table;
  }

  double propensity(int fold, const Vec& x, std::uint32_t t_code) const {
    return propensity_table(fold, x)[t_code];
  }
};

namespace detail {

inline Matrix treatment_matrix(const CausalDataset& data, const std::vector<int>& rows) {
  Matrix Y(static_cast<int>(rows.size()), data.M());
  for (int t = 0; t < Y.rows; ++t)
    for (int j = 0; j < Y.cols; ++j) Y(t, j) = data.T[rows[t]][j];
  return Y;
}

inline Matrix covariate_rows(const CausalDataset& data, const std::vector<int>& rows) {
  Matrix Xs(static_cast<int>(rows.size()), data.d());
  for (int t = 0; t < Xs.rows; ++t)
    for (int k = 0; k < Xs.cols; ++k) Xs(t, k) = data.X(rows[t], k);
  return Xs;
}

// Ridge-penalized multinomial logit over the 2^M levels with features (1, x),
// fit by gradient ascent with backtracking.
inline GpsFoldFit fit_mnl(const Matrix& Xs, const std::vector<std::vector<int>>& Ts, int M,
                          const GpsConfig& cfg) {
  const int n = Xs.rows, d = Xs.cols, q = 1 + d;
  const int L = 1 << M;
  std::vector<int> label(n);
  for (int i = 0; i < n; ++i) label[i] = static_cast<int>(encode_outcome(Ts[i]));

  GpsFoldFit fit;
  fit.mnl_coef = Matrix(L, q);
  Matrix B = fit.mnl_coef;  // zeros
  Vec eta(L), prob(L);

  auto loglik = [&](const Matrix& coef) {
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      double emax = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < L; ++c) {
        double v = coef(c, 0);
        for (int k = 0; k < d; ++k) v += coef(c, 1 + k) * Xs(i, k);
        eta[c] = v;
        emax = std::max(emax, v);
      }
      double z = 0.0;
      for (int c = 0; c < L; ++c) z += std::exp(eta[c] - emax);
      ll += eta[label[i]] - emax - std::log(z);
    }
    double pen = 0.0;
    for (int c = 0; c < L; ++c)
      for (int k = 0; k < q; ++k) pen += coef(c, k) * coef(c, k);
    return ll / n - 0.5 * cfg.mnl_ridge * pen;
  };

  double obj = loglik(B);
  double step = 1.0;
  fit.mnl_converged = false;
  for (int it = 0; it < cfg.mnl_max_iters; ++it) {
    Matrix G(L, q);
    for (int i = 0; i < n; ++i) {
      double emax = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < L; ++c) {
        double v = B(c, 0);
        for (int k = 0; k < d; ++k) v += B(c, 1 + k) * Xs(i, k);
        eta[c] = v;
        emax = std::max(emax, v);
      }
      double z = 0.0;
      for (int c = 0; c < L; ++c) z += (prob[c] = std::exp(eta[c] - emax));
      for (int c = 0; c < L; ++c) {
        double w = ((label[i] == c ? 1.0 : 0.0) - prob[c] / z) / n;
        G(c, 0) += w;
        for (int k = 0; k < d; ++k) G(c, 1 + k) += w * Xs(i, k);
      }
    }
    double gmax = 0.0;
    for (int c = 0; c < L; ++c)
      for (int k = 0; k < q; ++k) {
        G(c, k) -= cfg.mnl_ridge * B(c, k);
        gmax = std::max(gmax, std::fabs(G(c, k)));
      }
    if (gmax <= cfg.mnl_tol) {
      fit.mnl_converged = true;
      break;
    }
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      Matrix trial = B;
      for (int c = 0; c < L; ++c)
        for (int k = 0; k < q; ++k) trial(c, k) += step * G(c, k);
      double o2 = loglik(trial);
      if (o2 > obj) {
        B = std::move(trial);
        obj = o2;
        step *= 1.6;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search stalled; gradient check next pass decides flag
  }
  fit.mnl_coef = std::move(B);
  return fit;
}

}  // namespace detail

// Cross-fitted generalized propensity scores. For each fold k the model is
// fit on the out-of-fold rows only; predictions for fold-k observations come
// from that fit.
inline GPSModel fit_gps(const CausalDataset& data, GpsMethod method, const std::vector<int>& folds_assignment,
                        const GpsConfig& cfg) {
  data.validate();
  const int n = data.n(), M = data.M(), d = data.d();
  if (static_cast<int>(folds_assignment.size()) != n)
    throw std::invalid_argument("fit_gps: fold assignment must cover all rows");
  int K = 0;
  for (int f : folds_assignment) {
    if (f < 0) throw std::invalid_argument("fit_gps: negative fold label");
    K = std::max(K, f + 1);
  }
  const bool model_based = method != GpsMethod::MNL;
  if (model_based) {
    if (cfg.anchors.rows == 0 || cfg.anchors.cols != d)
      throw std::invalid_argument("fit_gps: anchors must be a nonempty g x d grid");
    if (!(cfg.kernel.h > 0.0) || cfg.kernel.d != d)
      throw std::invalid_argument("fit_gps: kernel bandwidth/dimension mismatch");
  }

  GPSModel gps;
  gps.method = method;
  gps.eps_prop = cfg.eps_prop;
  gps.M = M;
  gps.anchors = cfg.anchors;
  gps.index = BundleIndex::make(M);
  gps.fold_of = folds_assignment;
  gps.folds.resize(K);
  const int p = gps.index.p();
  const int g = cfg.anchors.rows;
  const std::uint32_t L = 1u << M;

  Vec anchor(d);
  for (int k = 0; k < K; ++k) {
    std::vector<int> rows;
    for (int i = 0; i < n; ++i)
      if (folds_assignment[i] != k) rows.push_back(i);
    if (rows.empty()) throw std::invalid_argument("fit_gps: a fold contains every row");
    std::vector<std::vector<int>> Ts;
    Ts.reserve(rows.size());
    for (int i : rows) Ts.push_back(data.T[i]);
    Matrix Xs = detail::covariate_rows(data, rows);

    if (method == GpsMethod::MNL) {
      gps.folds[k] = detail::fit_mnl(Xs, Ts, M, cfg);
      continue;
    }

    Matrix Tmat = detail::treatment_matrix(data, rows);
    Matrix alpha_at;  // per-observation marginals, shared across anchors
    if (p > 0) alpha_at = local_marginal_features(Xs, Tmat, cfg.kernel, cfg.eps_trunc);

    GpsFoldFit& fit = gps.folds[k];
    fit.alpha = Matrix(g, M);
    fit.r.assign(g, Vec(p, 0.0));
    for (int a = 0; a < g; ++a) {
      for (int j = 0; j < d; ++j) anchor[j] = cfg.anchors(a, j);
      LocalLinearFit marg = fit_marginals_local(Xs, Tmat, anchor, cfg.kernel, cfg.eps_trunc);
      for (int j = 0; j < M; ++j) fit.alpha(a, j) = marg.alpha_hat[j];
      if (p == 0) continue;  // M = 1: the GPS is the marginal itself

      if (method == GpsMethod::NW) {
        // Kernel-weighted sample average of the interaction features.
        Vec num(p, 0.0);
        double den = 0.0;
        Vec ai(M);
        for (int t = 0; t < Xs.rows; ++t) {
          double kw = cfg.kernel.kh(Xs.row(t), anchor.data());
          if (kw <= 0.0) continue;
          for (int j = 0; j < M; ++j) ai[j] = alpha_at(t, j);
          Vec w = w_vector(Ts[t], ai, gps.index);
          for (int l = 0; l < p; ++l) num[l] += kw * w[l];
          den += kw;
        }
        if (den > 0.0)
          for (int l = 0; l < p; ++l) fit.r[a][l] = num[l] / den;
        continue;
      }

      LocalDesign des = build_local_design(Xs, Ts, anchor, cfg.kernel, gps.index, alpha_at);
      LocalPenaltySpec pen = local_penalty_weights(des, cfg.lambda);
      LocalFit lf;
      if (method == GpsMethod::Plugin) {
        lf = fit_local_plugin(des, pen, cfg.solver);
      } else {
        AdversarialBox box =
            bootstrap_box_local(marg, cfg.delta_box, cfg.bootstrap_B,
                                Rng::derive(cfg.seed, (static_cast<std::uint64_t>(k) << 20) + a).next_u64(),
                                cfg.eps_trunc);
        lf = fit_local_first_order(des, box, pen, cfg.solver, true);
      }
      gps.heuristic = gps.heuristic || lf.solve.heuristic;
      fit.r[a] = lf.a;
    }
  }

  // Normalization diagnostic at every anchor (pre-clamp).
  if (model_based) {
    Vec x(d);
    for (int k = 0; k < K; ++k) {
      for (int a = 0; a < g; ++a) {
        for (int j = 0; j < d; ++j) x[j] = cfg.anchors(a, j);
        Vec table = gps.propensity_table_raw(k, x);
        double s = 0.0;
        for (std::uint32_t c = 0; c < L; ++c) s += table[c];
        gps.max_norm_error = std::max(gps.max_norm_error, std::fabs(s - 1.0));
      }
    }
  }
  return gps;
}

// ---------------------------------------------------------------------------
// AIPW treatment-effect estimation
// ---------------------------------------------------------------------------

struct OutcomeModelConfig {
  // Default: per-level OLS of O on (1, X) in out-of-fold rows; pooled level
  // mean when fewer than d+2 rows. An oracle override replaces the fit.
  std::function<double(const Vec& x, std::uint32_t t_code)> oracle_mu;
};

struct AteEntry {
  std::uint32_t t = 0, t_ctrl = 0;  // outcome codes of the contrast (t, t')
  double tau = 0.0;
  double variance = 0.0;  // sample variance of influence contributions
  double ci_lo = 0.0, ci_hi = 0.0;
};

struct ATEResult {
  std::vector<AteEntry> contrasts;
  double delta = 0.05;
  double max_norm_error = 0.0;  // inherited GPS normalization diagnostic
  std::vector<int> fold_of;
};

using PropensityFn = std::function<double(int fold, const Vec& x, std::uint32_t t_code)>;

namespace detail {

// Influence contributions phi_t(i) for one treatment level across all rows.
inline Vec aipw_scores(const CausalDataset& data, std::uint32_t t_code, const std::vector<int>& fold_of, int K,
                       const PropensityFn& e_hat, const OutcomeModelConfig& om) {
  const int n = data.n(), d = data.d();
  std::vector<std::uint32_t> code(n);
  for (int i = 0; i < n; ++i) code[i] = encode_outcome(data.T[i]);

  // mu_hat per fold: coefficients of O ~ (1, X) within level-t rows, or a
  // pooled mean fallback.
  std::vector<Vec> coef(K);
  if (!om.oracle_mu) {
    for (int k = 0; k < K; ++k) {
      std::vector<int> rows;
      double all_sum = 0.0;
      int all_cnt = 0;
      for (int i = 0; i < n; ++i) {
        if (fold_of[i] == k) continue;
        all_sum += data.O[i];
        ++all_cnt;
        if (code[i] == t_code) rows.push_back(i);
      }
      const int q = 1 + d;
      if (static_cast<int>(rows.size()) >= d + 2) {
        Matrix A(q, q);
        Vec b(q, 0.0), z(q);
        for (int i : rows) {
          z[0] = 1.0;
          for (int j = 0; j < d; ++j) z[1 + j] = data.X(i, j);
          for (int a = 0; a < q; ++a) {
            b[a] += z[a] * data.O[i];
            for (int c = 0; c < q; ++c) A(a, c) += z[a] * z[c];
          }
        }
        Vec sol;
        if (solve_linear(A, b, sol)) {
          coef[k] = std::move(sol);
          continue;
        }
      }
      // pooled mean fallback (level mean if observed, else out-of-fold mean)
      double m = rows.empty() ? (all_cnt ? all_sum / all_cnt : 0.0) : 0.0;
      if (!rows.empty()) {
        for (int i : rows) m += data.O[i];
        m /= static_cast<double>(rows.size());
      }
      coef[k].assign(q, 0.0);
      coef[k][0] = m;
    }
  }

  Vec phi(n);
  Vec xi(d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) xi[j] = data.X(i, j);
    double mu;
    if (om.oracle_mu) {
      mu = om.oracle_mu(xi, t_code);
    } else {
      const Vec& c = coef[fold_of[i]];
      mu = c[0];
      for (int j = 0; j < d; ++j) mu += c[1 + j] * xi[j];
    }
    phi[i] = mu;
    if (code[i] == t_code) {
      double e = e_hat(fold_of[i], xi, t_code);
      phi[i] += (data.O[i] - mu) / e;
    }
  }
  return phi;
}

}  // namespace detail

inline ATEResult estimate_ate_with(const CausalDataset& data, const PropensityFn& e_hat,
                                   const OutcomeModelConfig& om,
                                   const std::vector<std::pair<std::uint32_t, std::uint32_t>>& contrasts,
                                   const std::vector<int>& fold_of, double delta = 0.05) {
  data.validate();
  const int n = data.n();
  if (static_cast<int>(fold_of.size()) != n)
    throw std::invalid_argument("estimate_ate: fold assignment must cover all rows");
  int K = 0;
  for (int f : fold_of) K = std::max(K, f + 1);

  std::vector<std::uint32_t> code(n);
  for (int i = 0; i < n; ++i) code[i] = encode_outcome(data.T[i]);
  auto observed = [&](std::uint32_t t) {
    for (std::uint32_t c : code)
      if (c == t) return true;
    return false;
  };

  // Score vectors computed once per distinct level.
  std::vector<Vec> phi(1u << data.M());
  std::vector<bool> have(phi.size(), false);
  auto scores = [&](std::uint32_t t) -> const Vec& {
    if (!have[t]) {
      if (!observed(t))
        throw std::invalid_argument("estimate_ate: treatment level " + std::to_string(t) + " never observed");
      phi[t] = detail::aipw_scores(data, t, fold_of, K, e_hat, om);
      have[t] = true;
    }
    return phi[t];
  };

  ATEResult res;
  res.delta = delta;
  res.fold_of = fold_of;
  const double z = normal_quantile(1.0 - delta / 2.0);
  for (auto [t, tc] : contrasts) {
    const Vec& a = scores(t);
    const Vec& b = scores(tc);
    Vec diff(n);
    for (int i = 0; i < n; ++i) diff[i] = a[i] - b[i];
    AteEntry e;
    e.t = t;
    e.t_ctrl = tc;
    e.tau = mean(diff);
    e.variance = variance(diff);
    double hw = z * std::sqrt(e.variance / n);
    e.ci_lo = e.tau - hw;
    e.ci_hi = e.tau + hw;
    res.contrasts.push_back(e);
  }
  return res;
}

inline ATEResult estimate_ate(const CausalDataset& data, const GPSModel& gps, const OutcomeModelConfig& om,
                              const std::vector<std::pair<std::uint32_t, std::uint32_t>>& contrasts,
                              double delta = 0.05) {
  if (static_cast<int>(gps.fold_of.size()) != data.n())
    throw std::invalid_argument("estimate_ate: GPS model was fit on a different sample size");
  PropensityFn e_hat = [&gps](int fold, const Vec& x, std::uint32_t t) {
    return gps.propensity(fold, x, t);
  };
  ATEResult res = estimate_ate_with(data, e_hat, om, contrasts, gps.fold_of, delta);
  res.max_norm_error = gps.max_norm_error;
  return res;
}

// ---------------------------------------------------------------------------
// Ground truth for the benchmark design
// ---------------------------------------------------------------------------

// H(t) = sum_j t_j 2^{j-1}; with coordinate 1 as the least significant bit
// this is exactly the outcome code.
inline int level_score(std::uint32_t t_code) { return static_cast<int>(t_code); }

// Semiparametric efficiency bound for the linear-outcome benchmark design:
// V*(t) = (1/15) 0.01 H(t)^2 + E[1/e_0(X)] + E[1/e_t(X)], with the
// expectation an exact average over the discrete covariate support.
// prop_tables[g] is the 2^M propensity table at support point g.
inline double true_efficiency_bound(const std::vector<Vec>& prop_tables, std::uint32_t t_code) {
  if (prop_tables.empty()) throw std::invalid_argument("true_efficiency_bound: empty support");
  const double H = static_cast<double>(level_score(t_code));
  double e0 = 0.0, et = 0.0;
  for (const Vec& tab : prop_tables) {
    if (t_code >= tab.size()) throw std::invalid_argument("true_efficiency_bound: level out of range");
    if (!(tab[0] > 0.0) || !(tab[t_code] > 0.0))
      throw std::invalid_argument("true_efficiency_bound: zero propensity in DGP");
    e0 += 1.0 / tab[0];
    et += 1.0 / tab[t_code];
  }
  const double g = static_cast<double>(prop_tables.size());
  return (1.0 / 15.0) * 0.01 * H * H + e0 / g + et / g;
}

// ---------------------------------------------------------------------------
// CSV interfaces
// ---------------------------------------------------------------------------

inline void write_causal_csv(std::ostream& os, const CausalDataset& data) {
  data.validate();
  os << "O";
  for (int j = 1; j <= data.M(); ++j) os << ",T" << j;
  for (int k = 1; k <= data.d(); ++k) os << ",X" << k;
  os << "\n";
  os.setf(std::ios::fmtflags(0), std::ios::floatfield);
  os.precision(17);
  for (int i = 0; i < data.n(); ++i) {
    os << data.O[i];
    for (int j = 0; j < data.M(); ++j) os << "," << data.T[i][j];
    for (int k = 0; k < data.d(); ++k) os << "," << data.X(i, k);
    os << "\n";
  }
}

inline CausalDataset read_causal_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("read_causal_csv: empty stream");
  int M = 0, d = 0;
  {
    std::stringstream hs(line);
    std::string tok;
    bool first = true;
    while (std::getline(hs, tok, ',')) {
      if (first) {
        if (tok != "O") throw std::invalid_argument("read_causal_csv: header must start with O");
        first = false;
      } else if (tok.rfind("T", 0) == 0) {
        ++M;
      } else if (tok.rfind("X", 0) == 0) {
        ++d;
      } else {
        throw std::invalid_argument("read_causal_csv: unknown column " + tok);
      }
    }
  }
  CausalDataset data;
  std::vector<Vec> xrows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tok;
    std::getline(ls, tok, ',');
    data.O.push_back(std::stod(tok));
    std::vector<int> t(M);
    for (int j = 0; j < M; ++j) {
      std::getline(ls, tok, ',');
      t[j] = std::stoi(tok);
    }
    data.T.push_back(std::move(t));
    Vec x(d);
    for (int k = 0; k < d; ++k) {
      std::getline(ls, tok, ',');
      x[k] = std::stod(tok);
    }
    xrows.push_back(std::move(x));
  }
  data.X = Matrix(static_cast<int>(xrows.size()), d);
  for (int i = 0; i < data.X.rows; ++i)
    for (int k = 0; k < d; ++k) data.X(i, k) = xrows[i][k];
  data.validate();
  return data;
}

// One row per contrast: tau, se, ci bounds, and a coverage flag when the
// truth is supplied (truth[i] = true ATE of contrasts[i], or empty).
inline void write_ate_csv(std::ostream& os, const ATEResult& res, const Vec& truth = {}) {
  if (!truth.empty() && truth.size() != res.contrasts.size())
    throw std::invalid_argument("write_ate_csv: truth length mismatch");
  os << "level,control,tau,se,ci_lo,ci_hi";
  if (!truth.empty()) os << ",covered";
  os << "\n";
  os.precision(17);
  const int n = static_cast<int>(res.fold_of.size());
  for (size_t i = 0; i < res.contrasts.size(); ++i) {
    const AteEntry& e = res.contrasts[i];
    double se = n > 0 ? std::sqrt(e.variance / n) : 0.0;
    os << e.t << "," << e.t_ctrl << "," << e.tau << "," << se << "," << e.ci_lo << "," << e.ci_hi;
    if (!truth.empty()) os << "," << ((truth[i] >= e.ci_lo && truth[i] <= e.ci_hi) ? 1 : 0);
    os << "\n";
  }
}

}  // namespace bahadur
