#include "doctest.h"

#include <cmath>
#include <sstream>

#include "bahadur/harness.hpp"

using namespace bahadur;

TEST_CASE("metrics oracle") {
  DgpConfig c = unconditional_setup(1);
  JointModel truth = JointModel::make(c.alpha0, c.r0);

  SUBCASE("exact estimate gives zero on every metric") {
    MetricValues m = metrics(truth.r, truth, truth.alpha);
    CHECK(m.rmse_contrib == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(m.max_prob_err == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(m.mean_prob_err == doctest::Approx(0.0).epsilon(1e-14));
  }

  SUBCASE("zero estimate has rmse equal to the coefficient norm") {
    Vec zero(truth.r.size(), 0.0);
    MetricValues m = metrics(zero, truth, truth.alpha);
    CHECK(m.rmse_contrib == doctest::Approx(std::sqrt(0.339 * 0.339 + 0.249 * 0.249)).epsilon(1e-12));
  }

  SUBCASE("probability errors agree with an independent full-table walk") {
    Vec r_hat(truth.r.size(), 0.0);
    r_hat[2] = 0.1;
    r_hat[7] = -0.2;
    Vec a_hat{0.6, 0.5, 0.64, 0.52};
    MetricValues m = metrics(r_hat, truth, a_hat);

    BundleIndex index = BundleIndex::make(4);
    double maxe = 0.0, meane = 0.0;
    for (std::uint32_t code = 0; code < 16; ++code) {
      std::vector<int> y = decode_outcome(code, 4);
      double p = (1.0 + dot(w_vector(y, truth.alpha, index), truth.r)) * product_pmf(y, truth.alpha);
      double ph = (1.0 + dot(w_vector(y, a_hat, index), r_hat)) * product_pmf(y, a_hat);
      maxe = std::max(maxe, std::fabs(ph - p));
      meane += p * std::fabs(ph - p);
    }
    CHECK(m.max_prob_err == doctest::Approx(maxe).epsilon(1e-12));
    CHECK(m.mean_prob_err == doctest::Approx(meane).epsilon(1e-12));
  }
}

TEST_CASE("factor diagnostics") {
  SUBCASE("independence gives a degenerate distribution at 1") {
    DgpConfig c = unconditional_setup(1);
    c.s = 0;
    c.r0.assign(11, 0.0);
    FactorDiagnostics d = factor_diagnostics(c, 3, 7);
    for (double q : d.quantiles) CHECK(q == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("unconditional benchmark 1 matches the published quantiles") {
    DgpConfig c = unconditional_setup(1);
    c.N = 100;
    FactorDiagnostics d = factor_diagnostics(c, 300, 11);
    CHECK(d.quantiles[0] == doctest::Approx(0.94).epsilon(0.11));
    CHECK(d.quantiles[1] == doctest::Approx(1.10).epsilon(0.10));
    CHECK(d.quantiles[2] == doctest::Approx(1.64).epsilon(0.07));
  }

  SUBCASE("conditional s=5 matches the published quantiles") {
    DgpConfig c = conditional_setup(5);
    FactorDiagnostics d = factor_diagnostics(c, 300, 13);
    CHECK(std::fabs(d.quantiles[0] - 0.91) < 0.10);
    CHECK(std::fabs(d.quantiles[1] - 1.03) < 0.10);
    CHECK(std::fabs(d.quantiles[2] - 1.23) < 0.10);
  }

  SUBCASE("histogram counts sum to the pooled sample size") {
    DgpConfig c = unconditional_setup(2);
    c.N = 50;
    FactorDiagnostics d = factor_diagnostics(c, 4, 3);
    int total = 0;
    for (int v : d.hist_counts) total += v;
    CHECK(total == 200);
    std::stringstream ss;
    d.write_csv(ss);
    CHECK(ss.str().find("q25,q50,q75") == 0);
  }
}

TEST_CASE("unconditional replication experiment") {
  ExperimentConfig cfg;
  cfg.dgp = unconditional_setup(1);
  cfg.replications = 10;
  cfg.base_seed = 42;
  cfg.estimators = {
      {"sample_average", EstimatorKind::SampleAverage, WeightScheme::I, LambdaRule::TheoryPI, false},
      {"pi_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryPI, false},
      {"fo_wI_theory", EstimatorKind::FirstOrder, WeightScheme::I, LambdaRule::TheoryFO, false},
      {"pi_oracle_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryOracle, true},
  };
  ReplicationReport rep = run_experiment(cfg);
  CHECK(rep.failures.empty());
  CHECK(rep.cells.size() == 12);  // 4 estimators x 3 metrics

  const ReportCell& pi = rep.cell("pi_wI_theory", "rmse");
  const ReportCell& fo = rep.cell("fo_wI_theory", "rmse");
  const ReportCell& oracle = rep.cell("pi_oracle_wI_theory", "rmse");
  CHECK(pi.count == 10);
  CHECK(std::isfinite(pi.mean));
  CHECK(pi.mean < 1.0);
  // Table-1 ordering on means (wide gaps; stable even at 10 reps)
  CHECK(oracle.mean < pi.mean);
  CHECK(fo.mean < pi.mean);

  // mean recomputable from raw values
  double s = 0.0;
  for (double v : pi.raw) s += v * v;
  CHECK(pi.mean == doctest::Approx(std::sqrt(s / pi.raw.size())).epsilon(1e-12));
  const ReportCell& pe = rep.cell("pi_wI_theory", "mean_prob_err");
  CHECK(pe.mean == doctest::Approx(mean(pe.raw)).epsilon(1e-12));
}

TEST_CASE("conditional replication experiment smoke") {
  ExperimentConfig cfg;
  cfg.dgp = conditional_setup(2, 100);
  cfg.replications = 3;
  cfg.base_seed = 5;
  cfg.bootstrap_B = 100;
  cfg.estimators = {
      {"pi_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryLocalPI, false},
      {"fo_wI_theory", EstimatorKind::FirstOrder, WeightScheme::I, LambdaRule::TheoryLocalFO, false},
      {"pi_oracle_wII_theory", EstimatorKind::Plugin, WeightScheme::OracleII, LambdaRule::TheoryLocalOracle, true},
  };
  ReplicationReport rep = run_experiment(cfg);
  CHECK(rep.failures.empty());
  for (const ReportCell& c : rep.cells) {
    CHECK(c.count == 3);
    CHECK(std::isfinite(c.mean));
  }
  // the target norm at x=0.5 is ~0.22; estimates should not explode
  CHECK(rep.cell("fo_wI_theory", "rmse").mean < 1.0);
}

TEST_CASE("replication reports are deterministic") {
  ExperimentConfig cfg;
  cfg.dgp = unconditional_setup(2);
  cfg.dgp.N = 200;
  cfg.replications = 2;
  cfg.base_seed = 77;
  cfg.estimators = {{"fo_wI_theory", EstimatorKind::FirstOrder, WeightScheme::I, LambdaRule::TheoryFO, false}};
  std::stringstream a, b;
  run_experiment(cfg).write_csv(a, true);
  run_experiment(cfg).write_csv(b, true);
  CHECK(a.str() == b.str());
  CHECK(a.str().find("estimator,metric,mean,se,count,raw") == 0);

  DgpConfig dc = unconditional_setup(1);
  dc.N = 100;
  std::stringstream fa, fb;
  factor_diagnostics(dc, 5, 9).write_csv(fa);
  factor_diagnostics(dc, 5, 9).write_csv(fb);
  CHECK(fa.str() == fb.str());
}

TEST_CASE("redrawn-marginal variant changes the environment but stays valid") {
  ExperimentConfig cfg;
  cfg.dgp = unconditional_setup(1);
  cfg.dgp.N = 150;
  cfg.dgp.redraw_marginals = true;
  cfg.replications = 3;
  cfg.base_seed = 12;
  cfg.estimators = {{"pi_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryPI, false}};
  ReplicationReport rep = run_experiment(cfg);
  CHECK(rep.failures.empty());
  JointModel fixed = unconditional_model(cfg.dgp, 12);
  JointModel redrawn = unconditional_model(cfg.dgp, 13);
  double diff = 0.0;
  for (int j = 0; j < 4; ++j) diff += std::fabs(fixed.alpha[j] - redrawn.alpha[j]);
  CHECK(diff > 1e-3);
}

TEST_CASE("coverage study with oracle nuisances") {
  CoverageConfig cfg;
  cfg.dgp = causal_setup(0, 400);
  cfg.methods = {GpsMethod::FO};  // label only; oracle path bypasses GPS fits
  cfg.oracle_nuisances = true;
  cfg.base_seed = 3;

  SUBCASE("single replication gives 0/1 cells") {
    cfg.replications = 1;
    CoverageReport rep = run_coverage_study(cfg);
    CHECK(rep.failures.empty());
    for (int l = 0; l < rep.coverage.rows; ++l) {
      double v = rep.coverage(l, 0);
      CHECK((v == 0.0 || v == 1.0));
    }
  }

  SUBCASE("100 replications land near the nominal level") {
    cfg.replications = 100;
    CoverageReport rep = run_coverage_study(cfg);
    CHECK(rep.failures.empty());
    double m = rep.method_mean(0);
    CHECK(m >= 0.89);
    CHECK(m <= 0.99);
    std::stringstream ss;
    rep.write_csv(ss);
    CHECK(ss.str().find("level,fo") == 0);
    std::stringstream ss2;
    run_coverage_study(cfg).write_csv(ss2);
    CHECK(ss.str() == ss2.str());
  }
}

TEST_CASE("coverage study fits every gps method end to end") {
  CoverageConfig cfg;
  cfg.dgp = causal_setup(0, 200);
  cfg.replications = 2;
  cfg.base_seed = 8;
  cfg.bootstrap_B = 100;
  CoverageReport rep = run_coverage_study(cfg);
  CHECK(rep.failures.empty());
  REQUIRE(rep.coverage.cols == 4);
  for (int l = 0; l < rep.coverage.rows; ++l)
    for (int m = 0; m < 4; ++m) {
      CHECK(rep.coverage(l, m) >= 0.0);
      CHECK(rep.coverage(l, m) <= 1.0);
    }
}

TEST_CASE("true ate and configuration guards") {
  CHECK(true_ate(15u) == doctest::Approx(2.25));
  CHECK(true_ate(1u) == doctest::Approx(0.15));
  CHECK_THROWS_AS(unconditional_setup(3), std::invalid_argument);
  ExperimentConfig bad;
  bad.dgp = causal_setup(0, 100);
  bad.estimators = {{"x", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryPI, false}};
  CHECK_THROWS_AS(run_experiment(bad), std::invalid_argument);
  CoverageConfig cbad;
  cbad.dgp = unconditional_setup(1);
  CHECK_THROWS_AS(run_coverage_study(cbad), std::invalid_argument);
}
