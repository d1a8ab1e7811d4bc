// Acceptance gate: one self-contained check per release criterion, selected
// with --criterion N. Each run prints a single pass/fail line and exits 0/1.

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bahadur/harness.hpp"

using namespace bahadur;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Random model with a valid (nonnegative) pmf: sparse coefficients are halved
// until the set-K condition holds.
JointModel random_valid_model(int M, Rng& rng) {
  BundleIndex index = BundleIndex::make(M);
  Vec alpha(M);
  for (double& a : alpha) a = 0.15 + 0.7 * rng.uniform();
  Vec r(index.p(), 0.0);
  int nnz = 1 + rng.uniform_int(std::min(3, index.p()));
  for (int k = 0; k < nnz; ++k) r[rng.uniform_int(index.p())] = 0.6 * (rng.uniform() - 0.5);
  while (!validate_K(alpha, r, index).valid)
    for (double& v : r) v *= 0.5;
  JointModel m;
  m.alpha = std::move(alpha);
  m.r = std::move(r);
  m.index = std::move(index);
  return m;
}

// 1. Exact algebra on random valid models.
std::string criterion1() {
  Rng rng = Rng::derive(11, 1);
  double worst_sum = 0.0, worst_round = 0.0, worst_ortho = 0.0;
  for (int M = 2; M <= 5; ++M) {
    for (int rep = 0; rep < 200; ++rep) {
      JointModel m = random_valid_model(M, rng);
      Vec table = pmf_table(m);
      double s = 0.0;
      for (double v : table) s += v;
      worst_sum = std::max(worst_sum, std::fabs(s - 1.0));

      auto [a2, r2] = extract_r0(table, m.index);
      for (int j = 0; j < M; ++j) worst_round = std::max(worst_round, std::fabs(a2[j] - m.alpha[j]));
      for (int l = 0; l < m.index.p(); ++l) worst_round = std::max(worst_round, std::fabs(r2[l] - m.r[l]));

      // Orthonormality of the feature basis under the product measure.
      const int p = m.index.p();
      std::vector<Vec> W(1u << M);
      Vec pw(1u << M);
      for (std::uint32_t c = 0; c < (1u << M); ++c) {
        std::vector<int> y = decode_outcome(c, M);
        W[c] = w_vector(y, m.alpha, m.index);
        pw[c] = product_pmf(y, m.alpha);
      }
      for (int k = 0; k < p; ++k)
        for (int l = k; l < p; ++l) {
          double e = 0.0;
          for (std::uint32_t c = 0; c < (1u << M); ++c) e += pw[c] * W[c][k] * W[c][l];
          worst_ortho = std::max(worst_ortho, std::fabs(e - (k == l ? 1.0 : 0.0)));
        }
    }
  }
  require(worst_sum < 1e-12, "pmf sum error " + fmt(worst_sum));
  require(worst_round < 1e-12, "coefficient roundtrip error " + fmt(worst_round));
  require(worst_ortho < 1e-10, "orthonormality error " + fmt(worst_ortho));
  return "pmf sums, coefficient roundtrip, basis orthonormality exact on 800 random models (worst " +
         fmt(std::max({worst_sum, worst_round, worst_ortho})) + ")";
}

// 2. Analytic feature gradients vs central finite differences.
std::string criterion2() {
  Rng rng = Rng::derive(22, 1);
  double worst = 0.0;
  const double eps = 1e-6;
  for (int rep = 0; rep < 500; ++rep) {
    int M = 2 + rng.uniform_int(3);
    BundleIndex index = BundleIndex::make(M);
    Vec alpha(M);
    for (double& a : alpha) a = 0.15 + 0.7 * rng.uniform();
    std::vector<int> y(M);
    for (int j = 0; j < M; ++j) y[j] = rng.uniform() < 0.5 ? 0 : 1;
    Matrix G = gradient_w_alpha(y, alpha, index);
    for (int j = 0; j < M; ++j) {
      Vec ap = alpha, am = alpha;
      ap[j] += eps;
      am[j] -= eps;
      Vec wp = w_vector(y, ap, index), wm = w_vector(y, am, index);
      for (int l = 0; l < index.p(); ++l) {
        double fd = (wp[l] - wm[l]) / (2.0 * eps);
        double rel = std::fabs(G(l, j) - fd) / std::max(1.0, std::fabs(fd));
        worst = std::max(worst, rel);
      }
    }
  }
  require(worst < 1e-5, "gradient relative error " + fmt(worst));
  return "analytic gradients match finite differences on 500 points (max rel err " + fmt(worst) + ")";
}

// 3. Solver correctness on closed forms, kill thresholds, KKT, and box limits.
std::string criterion3() {
  // (a) closed-form M=2 fit: counts (30, 20, 20, 30) over outcome codes 0..3
  //     give the unpenalized maximizer r = 0.2 exactly.
  BundleIndex idx2 = BundleIndex::make(2);
  std::vector<std::vector<int>> Y;
  const int counts[4] = {30, 20, 20, 30};
  for (std::uint32_t c = 0; c < 4; ++c)
    for (int k = 0; k < counts[c]; ++k) Y.push_back(decode_outcome(c, 2));
  Vec alpha = fit_marginals_unconditional(Y);
  Matrix W = w_matrix(Y, alpha, idx2);
  PenaltySpec pen0;
  pen0.lambda = 0.0;
  pen0.w.assign(1, 1.0);
  FitResult closed = fit_plugin(W, pen0, {});
  require(std::fabs(closed.r[0] - 0.2) < 1e-8,
          "closed-form fit r=" + fmt(closed.r[0]) + " (expected 0.2)");

  // (b) the kill-threshold penalty zeroes every coefficient exactly.
  Rng rng = Rng::derive(33, 1);
  JointModel m4 = random_valid_model(4, rng);
  auto Y4 = sample(m4, 400, rng.next_u64());
  Vec a4 = fit_marginals_unconditional(Y4);
  Matrix W4 = w_matrix(Y4, a4, m4.index);
  PenaltySpec pk;
  pk.w = penalty_weights(W4).w;
  pk.lambda = kill_threshold(W4, pk.w) * (1.0 + 1e-10);
  FitResult killed = fit_plugin(W4, pk, {});
  for (double v : killed.r) require(v == 0.0, "kill threshold left a nonzero coefficient");

  // (c) KKT residuals on 50 random penalized instances.
  SolverOptions opt;
  double worst_kkt = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    JointModel m = random_valid_model(4, rng);
    auto Ys = sample(m, 300, rng.next_u64());
    Vec a = fit_marginals_unconditional(Ys);
    Matrix Ws = w_matrix(Ys, a, m.index);
    PenaltySpec ps;
    ps.w = penalty_weights(Ws).w;
    LambdaContext lc;
    lc.N = 300;
    lc.M = 4;
    lc.p = m.index.p();
    ps.lambda = lambda_value(LambdaRule::TheoryPI, lc);
    FitResult res = fit_plugin(Ws, ps, opt);
    require(res.converged, "plugin fit did not converge on instance " + std::to_string(rep));
    const int n = Ws.rows, p = Ws.cols;
    Vec g(p, 0.0);
    for (int i = 0; i < n; ++i) {
      double f = 1.0 + dot(Ws.row(i), res.r.data(), p);
      for (int j = 0; j < p; ++j) g[j] += Ws(i, j) / (n * f);
    }
    for (int j = 0; j < p; ++j) {
      double resid = res.r[j] != 0.0
                         ? std::fabs(g[j] - ps.lambda * ps.w[j] * (res.r[j] > 0 ? 1.0 : -1.0))
                         : std::max(0.0, std::fabs(g[j]) - ps.lambda * ps.w[j]);
      worst_kkt = std::max(worst_kkt, resid);
    }
  }
  require(worst_kkt < 10.0 * opt.abs_tol, "KKT residual " + fmt(worst_kkt));

  // (d) first-order fit with a zero-width nuisance box collapses to plug-in.
  JointModel md = random_valid_model(4, rng);
  auto Yd = sample(md, 300, rng.next_u64());
  Vec ad = fit_marginals_unconditional(Yd);
  Matrix Wd = w_matrix(Yd, ad, md.index);
  PenaltySpec pd;
  pd.w = penalty_weights(Wd).w;
  LambdaContext lcd;
  lcd.N = 300;
  lcd.M = 4;
  lcd.p = md.index.p();
  pd.lambda = lambda_value(LambdaRule::TheoryFO, lcd);
  AdversarialBox box;
  box.level_lo = box.level_hi = ad;
  box.cv = 0.0;
  FitResult plug = fit_plugin(Wd, pd, opt);
  std::vector<Matrix> grads;
  for (const auto& y : Yd) grads.push_back(gradient_w_alpha(y, ad, md.index));
  FitResult fo = fit_first_order(Wd, grads, ad, box, pd, opt);
  double dmax = 0.0;
  for (size_t j = 0; j < plug.r.size(); ++j) dmax = std::max(dmax, std::fabs(plug.r[j] - fo.r[j]));
  require(dmax < 1e-8, "zero-width box vs plug-in gap " + fmt(dmax));

  return "closed form, exact kills, KKT residual " + fmt(worst_kkt) + ", zero-box gap " + fmt(dmax);
}

// 4. Unconditional replication study: error levels and estimator ordering.
std::string criterion4() {
  ExperimentConfig cfg;
  cfg.dgp = unconditional_setup(1);
  cfg.replications = 50;
  cfg.base_seed = 6001;
  cfg.estimators = {
      {"pi_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryPI, false},
      {"fo_wI_theory", EstimatorKind::FirstOrder, WeightScheme::I, LambdaRule::TheoryFO, false},
      {"pi_oracle_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryOracle, true},
  };
  ReplicationReport rep = run_experiment(cfg);
  require(rep.failures.empty(), "replication failures: " + std::to_string(rep.failures.size()));
  double pi = rep.cell("pi_wI_theory", "rmse").mean;
  double fo = rep.cell("fo_wI_theory", "rmse").mean;
  double oracle = rep.cell("pi_oracle_wI_theory", "rmse").mean;
  require(fo >= 0.10 && fo <= 0.32, "fo rmse " + fmt(fo) + " outside [0.10, 0.32]");
  require(pi >= 0.20 && pi <= 0.55, "plug-in rmse " + fmt(pi) + " outside [0.20, 0.55]");
  require(oracle >= 0.06 && oracle <= 0.18, "oracle rmse " + fmt(oracle) + " outside [0.06, 0.18]");
  require(oracle < fo && fo < pi, "ordering oracle < fo < pi violated: " + fmt(oracle) + " / " + fmt(fo) +
                                      " / " + fmt(pi));
  return "50-rep rmse oracle " + fmt(oracle) + " < fo " + fmt(fo) + " < plug-in " + fmt(pi);
}

// 5. Correction-factor quantiles of both reference designs.
std::string criterion5() {
  DgpConfig u = unconditional_setup(1);
  u.N = 100;
  FactorDiagnostics du = factor_diagnostics(u, 300, 5);
  const double tu[3] = {0.94, 1.10, 1.64};
  for (int q = 0; q < 3; ++q)
    require(std::fabs(du.quantiles[q] - tu[q]) <= 0.10,
            "unconditional q" + std::to_string(q) + " = " + fmt(du.quantiles[q]));

  DgpConfig c = conditional_setup(5, 100);
  FactorDiagnostics dc = factor_diagnostics(c, 300, 5);
  const double tc[3] = {0.91, 1.03, 1.23};
  for (int q = 0; q < 3; ++q)
    require(std::fabs(dc.quantiles[q] - tc[q]) <= 0.10,
            "conditional q" + std::to_string(q) + " = " + fmt(dc.quantiles[q]));
  return "factor quantiles (" + fmt(du.quantiles[0]) + ", " + fmt(du.quantiles[1]) + ", " +
         fmt(du.quantiles[2]) + ") and (" + fmt(dc.quantiles[0]) + ", " + fmt(dc.quantiles[1]) + ", " +
         fmt(dc.quantiles[2]) + ") within 0.10 of targets";
}

// 6. Conditional replication study: robust fit beats plug-in at theory lambda.
std::string criterion6() {
  ExperimentConfig cfg;
  cfg.dgp = conditional_setup(2, 100);
  cfg.replications = 50;
  cfg.base_seed = 1;
  cfg.kernel_h = 0.1634;
  cfg.estimators = {
      {"pi_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryLocalPI, false},
      {"fo_wI_theory", EstimatorKind::FirstOrder, WeightScheme::I, LambdaRule::TheoryLocalFO, false},
  };
  ReplicationReport rep = run_experiment(cfg);
  require(rep.failures.empty(), "replication failures: " + std::to_string(rep.failures.size()));
  double pi = rep.cell("pi_wI_theory", "rmse").mean;
  double fo = rep.cell("fo_wI_theory", "rmse").mean;
  require(fo >= 0.08 && fo <= 0.35, "fo rmse " + fmt(fo) + " outside [0.08, 0.35]");
  require(fo < pi, "fo rmse " + fmt(fo) + " not below plug-in rmse " + fmt(pi));
  return "50-rep conditional rmse fo " + fmt(fo) + " < plug-in " + fmt(pi);
}

// 7. Causal suite: oracle effect formula, cross-fitting hygiene, coverage.
std::string criterion7() {
  // (a) the design's average effect is 0.15 per unit of the treatment score.
  DgpConfig dgp = causal_setup(0, 400);
  for (std::uint32_t t = 1; t < 16; ++t) {
    double mu_diff = 0.0;
    for (int g = 1; g <= 9; ++g) {
      double x = 0.1 * g;
      double H = static_cast<double>(t);
      mu_diff += (0.1 * H + (0.5 + 0.1 * H) * x - 0.5 * x) / 9.0;
    }
    require(std::fabs(true_ate(t) - 0.15 * t) == 0.0, "closed-form effect mismatch");
    require(std::fabs(mu_diff - true_ate(t)) < 1e-12,
            "design oracle disagrees with effect formula at level " + std::to_string(t));
  }

  // (b) cross-fitting hygiene: corrupting fold-0 rows must not move fold-0
  //     propensity predictions (they are fit on the other folds only).
  CausalDataset data = sample_causal(dgp, 99);
  std::vector<int> folds = fold_assignment(data.n(), 5, 123);
  GpsConfig gcfg;
  gcfg.kernel = KernelSpec(KernelKind::FloorShiftedQuadratic, default_bandwidth(11, data.n(), 1), 1);
  gcfg.anchors = Matrix(9, 1);
  for (int g = 0; g < 9; ++g) gcfg.anchors(g, 0) = 0.1 * (g + 1);
  gcfg.seed = 7;
  GPSModel clean = fit_gps(data, GpsMethod::NW, folds, gcfg);
  CausalDataset poisoned = data;
  for (int i = 0; i < data.n(); ++i)
    if (folds[i] == 0) {
      for (int j = 0; j < data.M(); ++j) poisoned.T[i][j] = 1 - poisoned.T[i][j];
      poisoned.O[i] += 100.0;
    }
  GPSModel dirty = fit_gps(poisoned, GpsMethod::NW, folds, gcfg);
  bool other_fold_moved = false;
  for (int g = 1; g <= 9; ++g) {
    Vec x{0.1 * g};
    for (std::uint32_t t = 0; t < 16; ++t) {
      require(clean.propensity(0, x, t) == dirty.propensity(0, x, t),
              "fold-0 prediction moved after poisoning fold-0 rows");
      if (clean.propensity(1, x, t) != dirty.propensity(1, x, t)) other_fold_moved = true;
    }
  }
  require(other_fold_moved, "poisoning had no effect anywhere (test not exercising the fit)");

  // (c) interval coverage across the 15 treatment contrasts.
  CoverageConfig cov;
  cov.dgp = dgp;
  cov.methods = {GpsMethod::FO, GpsMethod::NW};
  cov.replications = 100;
  cov.base_seed = 1;
  CoverageReport rep = run_coverage_study(cov);
  require(rep.failures.empty(), "coverage failures: " + std::to_string(rep.failures.size()));
  double fo = rep.method_mean(0), nw = rep.method_mean(1);
  require(fo >= 0.80, "robust-GPS mean coverage " + fmt(fo) + " below 0.80");
  require(fo >= nw, "robust-GPS coverage " + fmt(fo) + " below kernel-average coverage " + fmt(nw));
  return "effect formula exact, cross-fitting isolated, coverage fo " + fmt(fo) + " >= nw " + fmt(nw);
}

// 8. Determinism: identical configs give byte-identical reports.
std::string criterion8() {
  auto run_sim = [] {
    ExperimentConfig cfg;
    cfg.dgp = unconditional_setup(1);
    cfg.replications = 3;
    cfg.base_seed = 42;
    cfg.estimators = table1_estimators(true);
    std::ostringstream os;
    run_experiment(cfg).write_csv(os, true);
    return os.str();
  };
  require(run_sim() == run_sim(), "replication report not byte-identical across runs");

  auto run_cond = [] {
    ExperimentConfig cfg;
    cfg.dgp = conditional_setup(2, 100);
    cfg.replications = 2;
    cfg.base_seed = 42;
    cfg.kernel_h = 0.1634;
    cfg.estimators = {
        {"fo_wI_theory", EstimatorKind::FirstOrder, WeightScheme::I, LambdaRule::TheoryLocalFO, false}};
    std::ostringstream os;
    run_experiment(cfg).write_csv(os, true);
    return os.str();
  };
  require(run_cond() == run_cond(), "conditional report not byte-identical across runs");

  auto run_cov = [] {
    CoverageConfig cfg;
    cfg.dgp = causal_setup(0, 200);
    cfg.replications = 2;
    cfg.base_seed = 42;
    std::ostringstream os;
    run_coverage_study(cfg).write_csv(os);
    return os.str();
  };
  require(run_cov() == run_cov(), "coverage report not byte-identical across runs");
  return "simulate, conditional, and coverage reports byte-identical across repeated runs";
}

}  // namespace

int main(int argc, char** argv) {
  int criterion = 0;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::strcmp(argv[i], "--criterion") == 0) criterion = std::atoi(argv[i + 1]);
  if (criterion < 1 || criterion > 8) {
    std::cerr << "usage: acceptance --criterion N   (N in 1..8)\n";
    return 2;
  }
  using Fn = std::string (*)();
  const Fn checks[8] = {criterion1, criterion2, criterion3, criterion4,
                        criterion5, criterion6, criterion7, criterion8};
  auto t0 = std::chrono::steady_clock::now();
  try {
    std::string detail = checks[criterion - 1]();
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << criterion << ": PASS (" << fmt(secs) << "s) — " << detail << "\n";
    return 0;
  } catch (const std::exception& ex) {
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << criterion << ": FAIL (" << fmt(secs) << "s) — " << ex.what() << "\n";
    return 1;
  }
}
