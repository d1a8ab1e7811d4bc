// Command-line front end: estimation on user data, simulation replication
// reports, causal coverage studies, and DGP factor diagnostics.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bahadur/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bahadur;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  int reps = 0;  // 0 = keep config/scenario default
  int jobs = 1;
  bool seed_set = false, reps_set = false, out_set = false;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

void check_known_keys(const json& j, const std::vector<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::runtime_error("unknown config key: " + it.key());
  }
}

void apply_env_overrides(CommonOpts& o) {
  if (const char* v = std::getenv("BAHADUR_OUT_DIR"); v && *v && !o.out_set) o.out_dir = v;
  if (const char* v = std::getenv("BAHADUR_JOBS"); v && *v) o.jobs = std::max(1, std::atoi(v));
}

void write_resolved_config(const fs::path& dir, const json& resolved) {
  std::ofstream out(dir / "resolved_config.json");
  out << resolved.dump(2) << "\n";
}

fs::path prepare_out_dir(const CommonOpts& o) {
  fs::path dir(o.out_dir);
  fs::create_directories(dir);
  return dir;
}

// ---- estimate ----

struct EstimateInput {
  std::vector<std::vector<int>> Y;
  Matrix X;  // empty if unconditional
  int M = 0, d = 0;
};

// CSV schema: header "Y1,...,YM[,X1,...,Xd]"; Y columns binary.
EstimateInput read_outcome_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty input file");
  EstimateInput out;
  {
    std::stringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) {
      if (tok.rfind("Y", 0) == 0) {
        if (out.d > 0) throw std::runtime_error("Y columns must precede X columns");
        ++out.M;
      } else if (tok.rfind("X", 0) == 0) {
        ++out.d;
      } else {
        throw std::runtime_error("unknown column in header: " + tok);
      }
    }
  }
  if (out.M < 1) throw std::runtime_error("input needs at least one Y column");
  std::vector<Vec> xrows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tok;
    std::vector<int> y(out.M);
    for (int j = 0; j < out.M; ++j) {
      std::getline(ls, tok, ',');
      y[j] = std::stoi(tok);
      if (y[j] != 0 && y[j] != 1) throw std::runtime_error("non-binary outcome value: " + tok);
    }
    out.Y.push_back(std::move(y));
    Vec x(out.d);
    for (int k = 0; k < out.d; ++k) {
      std::getline(ls, tok, ',');
      x[k] = std::stod(tok);
    }
    xrows.push_back(std::move(x));
  }
  if (out.Y.empty()) throw std::runtime_error("input has no data rows");
  out.X = Matrix(static_cast<int>(xrows.size()), out.d);
  for (int i = 0; i < out.X.rows; ++i)
    for (int k = 0; k < out.d; ++k) out.X(i, k) = xrows[i][k];
  return out;
}

LambdaRule parse_rule(const std::string& s, bool conditional) {
  if (s == "theory_pi") return conditional ? LambdaRule::TheoryLocalPI : LambdaRule::TheoryPI;
  if (s == "theory_fo") return conditional ? LambdaRule::TheoryLocalFO : LambdaRule::TheoryFO;
  if (s == "theory_oracle") return conditional ? LambdaRule::TheoryLocalOracle : LambdaRule::TheoryOracle;
  if (s == "cv") return LambdaRule::CV;
  throw std::runtime_error("unknown lambda rule: " + s);
}

int cmd_estimate(const CommonOpts& common, const std::string& input, const std::string& estimator,
                 const std::string& weights, const std::string& lambda_rule, double bandwidth,
                 const std::vector<double>& anchors) {
  if (weights != "I") throw std::runtime_error("only weight scheme I is feasible on user data (no true factors)");
  EstimateInput data = read_outcome_csv(input);
  const bool conditional = data.d > 0;
  BundleIndex index = BundleIndex::make(data.M);
  const int N = static_cast<int>(data.Y.size());
  SolverOptions sopt;

  fs::path dir = prepare_out_dir(common);
  json resolved = {{"subcommand", "estimate"},
                   {"input", input},
                   {"estimator", estimator},
                   {"weights", weights},
                   {"lambda_rule", lambda_rule},
                   {"seed", common.seed},
                   {"jobs", common.jobs},
                   {"out", common.out_dir},
                   {"M", data.M},
                   {"d", data.d},
                   {"n", N}};

  bool converged = true;
  std::ofstream fit_csv(dir / "fit.csv");
  fit_csv.precision(17);
  std::ofstream diag(dir / "diagnostics.csv");
  diag.precision(17);
  diag << "anchor,lambda,objective,iterations,converged,heuristic,min_factor\n";

  if (!conditional) {
    Vec alpha = fit_marginals_unconditional(data.Y);
    Matrix W = w_matrix(data.Y, alpha, index);
    PenaltySpec pen;
    pen.w = penalty_weights(W).w;
    LambdaContext lc;
    lc.N = N;
    lc.M = data.M;
    lc.p = index.p();
    LambdaRule rule = parse_rule(lambda_rule, false);
    double lambda;
    if (rule == LambdaRule::CV) {
      Vec grid = default_lambda_grid(std::max(kill_threshold(W, pen.w), 1e-6));
      auto fit_fn = [&](const std::vector<int>& rows, double lam) {
        std::vector<std::vector<int>> Ys;
        for (int i : rows) Ys.push_back(data.Y[i]);
        Vec a = fit_marginals_unconditional(Ys);
        Matrix Ws = w_matrix(Ys, a, index);
        PenaltySpec ps;
        ps.lambda = lam;
        ps.w = penalty_weights(Ws).w;
        return std::make_pair(a, fit_plugin(Ws, ps, sopt).r);
      };
      auto score_fn = [&](const std::pair<Vec, Vec>& m, const std::vector<int>& rows) {
        double ll = 0.0;
        for (int i : rows) {
          double f = (1.0 + dot(w_vector(data.Y[i], m.first, index), m.second)) *
                     product_pmf(data.Y[i], m.first);
          ll += std::log(std::max(f, 1e-8));
        }
        return ll;
      };
      lambda = cross_validate_lambda(N, grid, 5, common.seed, fit_fn, score_fn).lambda;
    } else {
      lambda = lambda_value(rule, lc);
    }
    pen.lambda = lambda;

    FitResult res;
    if (estimator == "plugin" || estimator == "sample_average") {
      if (estimator == "sample_average") {
        res.r.assign(index.p(), 0.0);
        for (const auto& y : data.Y) {
          Vec w = w_vector(y, alpha, index);
          for (int k = 0; k < index.p(); ++k) res.r[k] += w[k] / N;
        }
        res.converged = true;
      } else {
        res = fit_plugin(W, pen, sopt);
      }
    } else if (estimator == "fo") {
      AdversarialBox box = bootstrap_box_unconditional(data.Y, alpha, 0.05, 200, common.seed);
      std::vector<Matrix> grads;
      for (const auto& y : data.Y) grads.push_back(gradient_w_alpha(y, alpha, index));
      res = fit_first_order(W, grads, alpha, box, pen, sopt);
    } else if (estimator == "approx") {
      AdversarialBox box = bootstrap_box_unconditional(data.Y, alpha, 0.05, 200, common.seed);
      res = fit_adversarial_approx(data.Y, alpha, box, index, pen, sopt, 64, common.seed + 1);
    } else {
      throw std::runtime_error("unknown estimator: " + estimator);
    }
    converged = res.converged;
    resolved["lambda"] = lambda;

    fit_csv << "kind,coordinate,bundle,value\n";
    for (int j = 0; j < data.M; ++j) fit_csv << "alpha," << (j + 1) << ",," << alpha[j] << "\n";
    for (int k = 0; k < index.p(); ++k) {
      fit_csv << "r," << (k + 1) << ",";
      const auto& sub = index.subset_of(k);
      for (size_t t = 0; t < sub.size(); ++t) fit_csv << (t ? "&" : "") << (sub[t] + 1);
      fit_csv << "," << res.r[k] << "\n";
    }
    diag << "unconditional," << lambda << "," << res.objective << "," << res.iterations << "," << res.converged
         << "," << res.heuristic << "," << res.min_factor << "\n";

    // feasibility + pmf table
    ValidityReport vr = validate_K(alpha, res.r, index);
    std::ofstream feas(dir / "feasibility.csv");
    feas.precision(17);
    feas << "valid,min_factor\n" << vr.valid << "," << vr.min_value << "\n";
    if (data.M <= 12) {
      JointModel m;
      m.alpha = alpha;
      m.r = res.r;
      m.index = index;
      std::ofstream pt(dir / "pmf.csv");
      pt.precision(17);
      pt << "code,probability\n";
      Vec table = pmf_table(m);
      for (std::uint32_t c = 0; c < table.size(); ++c) pt << c << "," << table[c] << "\n";
    }
  } else {
    if (anchors.empty()) throw std::runtime_error("conditional data needs --anchors");
    if (data.d != 1) throw std::runtime_error("only d=1 covariates supported by the CLI estimate path");
    double h = bandwidth > 0.0 ? bandwidth : default_bandwidth(index.p(), N, data.d);
    KernelSpec kernel(KernelKind::FloorShiftedQuadratic, h, data.d);
    resolved["bandwidth"] = h;
    LambdaContext lc;
    lc.N = N;
    lc.M = data.M;
    lc.p = index.p();
    lc.d = data.d;
    lc.h = h;
    LambdaRule rule = parse_rule(lambda_rule, true);
    if (rule == LambdaRule::CV)
      throw std::runtime_error("cv lambda selection is not offered for conditional estimation");
    double lambda = lambda_value(rule, lc);
    resolved["lambda"] = lambda;

    Matrix Ymat(N, data.M);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < data.M; ++j) Ymat(i, j) = data.Y[i][j];
    Matrix alpha_at = local_marginal_features(data.X, Ymat, kernel);

    fit_csv << "anchor,kind,coordinate,value\n";
    for (double ax : anchors) {
      Vec anchor{ax};
      LocalLinearFit marg = fit_marginals_local(data.X, Ymat, anchor, kernel);
      LocalDesign des = build_local_design(data.X, data.Y, anchor, kernel, index, alpha_at);
      LocalPenaltySpec pen = local_penalty_weights(des, lambda);
      LocalFit lf;
      if (estimator == "plugin") {
        lf = fit_local_plugin(des, pen, sopt);
      } else if (estimator == "fo") {
        AdversarialBox box = bootstrap_box_local(marg, 0.05, 200, common.seed);
        lf = fit_local_first_order(des, box, pen, sopt, true);
      } else {
        throw std::runtime_error("unknown conditional estimator: " + estimator);
      }
      converged = converged && lf.solve.converged;
      for (int j = 0; j < data.M; ++j) fit_csv << ax << ",alpha," << (j + 1) << "," << marg.alpha_hat[j] << "\n";
      for (int k = 0; k < index.p(); ++k) fit_csv << ax << ",level," << (k + 1) << "," << lf.a[k] << "\n";
      for (int k = 0; k < index.p(); ++k) fit_csv << ax << ",slope," << (k + 1) << "," << lf.b(k, 0) << "\n";
      diag << ax << "," << lambda << "," << lf.solve.objective << "," << lf.solve.iterations << ","
           << lf.solve.converged << "," << lf.solve.heuristic << "," << lf.solve.min_factor << "\n";
    }
  }

  write_resolved_config(dir, resolved);
  if (!converged) {
    json err = {{"error", "solver did not converge"}, {"out", common.out_dir}};
    std::cerr << err.dump() << "\n";
    return 2;
  }
  std::cout << "estimate: wrote " << (dir / "fit.csv").string() << "\n";
  return 0;
}

// ---- simulate ----

ExperimentConfig scenario_experiment(const std::string& name) {
  ExperimentConfig cfg;
  if (name == "unconditional-s2") {
    cfg.dgp = unconditional_setup(1);
    cfg.estimators = table1_estimators(true);
  } else if (name == "unconditional-s5") {
    cfg.dgp = unconditional_setup(2);
    cfg.estimators = table1_estimators(true);
  } else if (name == "conditional-s2" || name == "conditional-s5") {
    cfg.dgp = conditional_setup(name == "conditional-s2" ? 2 : 5, 100);
    cfg.kernel_h = 0.1634;
    cfg.estimators = {
        {"pi_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryLocalPI, false},
        {"pi_wII_theory", EstimatorKind::Plugin, WeightScheme::OracleII, LambdaRule::TheoryLocalPI, false},
        {"fo_wI_theory", EstimatorKind::FirstOrder, WeightScheme::I, LambdaRule::TheoryLocalFO, false},
        {"fo_wII_theory", EstimatorKind::FirstOrder, WeightScheme::OracleII, LambdaRule::TheoryLocalFO, false},
        {"pi_oracle_wI_theory", EstimatorKind::Plugin, WeightScheme::I, LambdaRule::TheoryLocalOracle, true},
        {"pi_oracle_wII_theory", EstimatorKind::Plugin, WeightScheme::OracleII, LambdaRule::TheoryLocalOracle,
         true},
    };
  } else {
    throw std::runtime_error("unknown simulate scenario: " + name);
  }
  return cfg;
}

CoverageConfig scenario_coverage(const std::string& name) {
  // causal-s{S}-n{N}
  CoverageConfig cfg;
  int s = 0, N = 0;
  if (std::sscanf(name.c_str(), "causal-s%d-n%d", &s, &N) != 2)
    throw std::runtime_error("unknown coverage scenario: " + name + " (expected causal-s{S}-n{N})");
  if ((s != 0 && s != 2 && s != 5 && s != 10) || (N != 200 && N != 300 && N != 400))
    throw std::runtime_error("coverage scenario out of range: s in {0,2,5,10}, n in {200,300,400}");
  cfg.dgp = causal_setup(s, N);
  return cfg;
}

int cmd_simulate(const CommonOpts& common, const std::string& scenario) {
  ExperimentConfig cfg = scenario_experiment(scenario);
  if (common.reps_set) cfg.replications = common.reps;
  if (common.seed_set) cfg.base_seed = common.seed;

  fs::path dir = prepare_out_dir(common);
  ReplicationReport rep = run_experiment(cfg);
  std::ofstream out(dir / "report.csv");
  rep.write_csv(out, true);

  json resolved = {{"subcommand", "simulate"}, {"scenario", scenario},   {"reps", cfg.replications},
                   {"seed", cfg.base_seed},    {"out", common.out_dir},  {"jobs", common.jobs},
                   {"bandwidth", cfg.dgp.scenario == Scenario::Conditional ? cfg.bandwidth() : 0.0}};
  write_resolved_config(dir, resolved);
  std::cout << "simulate: wrote " << (dir / "report.csv").string() << "\n";
  for (const ReportCell& c : rep.cells)
    if (c.metric == "rmse") std::cout << "  " << c.estimator << " rmse " << c.mean << " (n=" << c.count << ")\n";
  return rep.failures.empty() ? 0 : 2;
}

int cmd_coverage(const CommonOpts& common, const std::string& scenario) {
  CoverageConfig cfg = scenario_coverage(scenario);
  if (common.reps_set) cfg.replications = common.reps;
  if (common.seed_set) cfg.base_seed = common.seed;

  fs::path dir = prepare_out_dir(common);
  CoverageReport rep = run_coverage_study(cfg);
  std::ofstream out(dir / "coverage.csv");
  rep.write_csv(out);
  json resolved = {{"subcommand", "coverage"}, {"scenario", scenario},  {"reps", cfg.replications},
                   {"seed", cfg.base_seed},    {"out", common.out_dir}, {"jobs", common.jobs},
                   {"bandwidth", cfg.bandwidth()}};
  write_resolved_config(dir, resolved);
  std::cout << "coverage: wrote " << (dir / "coverage.csv").string() << "\n";
  for (size_t m = 0; m < rep.methods.size(); ++m)
    std::cout << "  " << gps_method_name(rep.methods[m]) << " mean coverage " << rep.method_mean(static_cast<int>(m))
              << "\n";
  return rep.failures.empty() ? 0 : 2;
}

int cmd_diagnose(const CommonOpts& common, const std::string& scenario) {
  DgpConfig dgp;
  if (scenario == "unconditional-s2") {
    dgp = unconditional_setup(1);
    dgp.N = 100;
  } else if (scenario == "unconditional-s5") {
    dgp = unconditional_setup(2);
    dgp.N = 100;
  } else if (scenario == "conditional-s2") {
    dgp = conditional_setup(2);
  } else if (scenario == "conditional-s5") {
    dgp = conditional_setup(5);
  } else {
    throw std::runtime_error("unknown diagnose scenario: " + scenario);
  }
  int reps = common.reps_set ? common.reps : 1000;
  fs::path dir = prepare_out_dir(common);
  FactorDiagnostics d = factor_diagnostics(dgp, reps, common.seed);
  std::ofstream out(dir / "factors.csv");
  d.write_csv(out);
  json resolved = {{"subcommand", "diagnose"}, {"scenario", scenario},  {"reps", reps},
                   {"seed", common.seed},      {"out", common.out_dir}, {"jobs", common.jobs}};
  write_resolved_config(dir, resolved);
  std::cout << "diagnose: q25=" << d.quantiles[0] << " q50=" << d.quantiles[1] << " q75=" << d.quantiles[2]
            << " -> " << (dir / "factors.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint probability estimation for binary outcome vectors"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string input, scenario;
  std::string estimator = "fo", weights = "I", lambda_rule = "theory_fo";
  double bandwidth = 0.0;
  std::vector<double> anchors;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file (flags override file values)");
    sub->add_option("--seed", common.seed, "base RNG seed")->each([&](const std::string&) { common.seed_set = true; });
    sub->add_option("--reps", common.reps, "replication count")->each([&](const std::string&) { common.reps_set = true; });
    sub->add_option("--out", common.out_dir, "output directory")->each([&](const std::string&) { common.out_set = true; });
    sub->add_option("--jobs", common.jobs, "worker pool bound");
  };

  CLI::App* est = app.add_subcommand("estimate", "fit a model to an outcome CSV");
  add_common(est);
  est->add_option("--input", input, "CSV with Y1..YM (and optional X1..Xd) columns")->required();
  est->add_option("--estimator", estimator, "sample_average | plugin | fo | approx");
  est->add_option("--weights", weights, "penalty weight scheme (I)");
  est->add_option("--lambda-rule", lambda_rule, "theory_pi | theory_fo | theory_oracle | cv");
  est->add_option("--bandwidth", bandwidth, "kernel bandwidth (conditional data)");
  est->add_option("--anchors", anchors, "anchor covariate values (conditional data)")->delimiter(',');

  CLI::App* sim = app.add_subcommand("simulate", "replication report for a named scenario");
  add_common(sim);
  sim->add_option("--scenario", scenario, "unconditional-s2 | unconditional-s5 | conditional-s2 | conditional-s5")
      ->required();

  CLI::App* cov = app.add_subcommand("coverage", "causal coverage study");
  add_common(cov);
  cov->add_option("--scenario", scenario, "causal-s{S}-n{N}")->required();

  CLI::App* dia = app.add_subcommand("diagnose", "factor quantile diagnostics for a DGP");
  add_common(dia);
  dia->add_option("--scenario", scenario, "unconditional-s2 | unconditional-s5 | conditional-s2 | conditional-s5")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    // config file values fill in anything not given on the command line
    json cfgj = load_config(common.config_path);
    check_known_keys(cfgj, {"seed", "reps", "out", "jobs", "scenario", "input", "estimator", "weights",
                            "lambda_rule", "bandwidth", "anchors"});
    if (cfgj.contains("seed") && !common.seed_set) {
      common.seed = cfgj["seed"].get<std::uint64_t>();
      common.seed_set = true;
    }
    if (cfgj.contains("reps") && !common.reps_set) {
      common.reps = cfgj["reps"].get<int>();
      common.reps_set = true;
    }
    if (cfgj.contains("out") && !common.out_set) {
      common.out_dir = cfgj["out"].get<std::string>();
      common.out_set = true;
    }
    if (cfgj.contains("jobs")) common.jobs = cfgj["jobs"].get<int>();
    if (cfgj.contains("scenario") && scenario.empty()) scenario = cfgj["scenario"].get<std::string>();
    if (cfgj.contains("input") && input.empty()) input = cfgj["input"].get<std::string>();
    if (cfgj.contains("estimator") && est->count("--estimator") == 0) estimator = cfgj["estimator"].get<std::string>();
    if (cfgj.contains("weights") && est->count("--weights") == 0) weights = cfgj["weights"].get<std::string>();
    if (cfgj.contains("lambda_rule") && est->count("--lambda-rule") == 0)
      lambda_rule = cfgj["lambda_rule"].get<std::string>();
    if (cfgj.contains("bandwidth") && bandwidth == 0.0) bandwidth = cfgj["bandwidth"].get<double>();
    if (cfgj.contains("anchors") && anchors.empty()) anchors = cfgj["anchors"].get<std::vector<double>>();
    apply_env_overrides(common);

    if (app.got_subcommand(est))
      return cmd_estimate(common, input, estimator, weights, lambda_rule, bandwidth, anchors);
    if (app.got_subcommand(sim)) return cmd_simulate(common, scenario);
    if (app.got_subcommand(cov)) return cmd_coverage(common, scenario);
    if (app.got_subcommand(dia)) return cmd_diagnose(common, scenario);
  } catch (const std::exception& ex) {
    json err = {{"error", ex.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 1;
}
