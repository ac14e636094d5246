#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "traforest/forest.hpp"
#include "traforest/io.hpp"
#include "traforest/optim.hpp"
#include "traforest/simulate.hpp"

using namespace traforest;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

int parse_mtry(const std::string& s, std::size_t J) {
  if (s == "all") return 0;
  if (s == "sqrt") return sqrt_mtry(J);
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    if (v < 1) throw UsageError("--mtry must be >= 1, 'sqrt' or 'all'");
    return v;
  } catch (const std::logic_error&) {
    throw UsageError("--mtry expects an integer, 'sqrt' or 'all', got '" + s + "'");
  }
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> g;
  for (const auto& item : split(s, ',')) {
    try {
      g.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError("--grid expects comma-separated positive numbers, got '" + item + "'");
    }
  }
  if (g.empty()) throw UsageError("--grid is empty");
  return g;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void check_covariates(const Forest& f, const SurvData& d) {
  if (d.covariate_names != f.covariate_names) {
    std::string expected;
    for (const auto& n : f.covariate_names) expected += (expected.empty() ? "" : ",") + n;
    throw SchemaError("data covariates do not match the model; expected columns: " + expected);
  }
  if (f.predictive())
    for (std::size_t i = 0; i < d.subjects.size(); ++i)
      if (!d.subjects[i].treatment)
        throw SchemaError("row " + std::to_string(i + 1) + ": predictive model needs a 'treatment' column");
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw InvalidArgument("cannot write '" + path + "'");
  return file;
}

struct FitArgs {
  std::string data, method = "Bs-theta", mtry = "sqrt", out, aggregation;
  int trees = 250, max_depth = 10, min_node = 20, order = 5;
  double subsample = 0.632;
  std::uint64_t seed = 1;
  bool no_oob = false, no_leaf_models = false;
  std::string solver = "newton";
};

int cmd_fit(const FitArgs& a) {
  if (a.trees < 1) throw UsageError("--trees must be >= 1");
  SplitSpec spec;
  try {
    spec = SplitSpec::parse(a.method, a.order);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  SurvData d = read_surv_csv(a.data);
  ForestConfig cfg;
  cfg.n_trees = a.trees;
  cfg.subsample_fraction = a.subsample;
  cfg.spec = spec;
  cfg.tree.max_depth = a.max_depth;
  cfg.tree.min_node = a.min_node;
  cfg.tree.mtry = parse_mtry(a.mtry, d.n_covariates());
  cfg.master_seed = a.seed;
  cfg.aggregation_order = a.order;
  cfg.fit_leaf_models = !a.no_leaf_models;
  if (a.solver == "spg") {
    cfg.fit.solver = Solver::AugLagSpg;
    cfg.tree.fit.solver = Solver::AugLagSpg;
  } else if (a.solver != "newton") {
    throw UsageError("--solver must be 'newton' or 'spg'");
  }
  if (!a.aggregation.empty()) {
    if (a.aggregation == "none")
      cfg.aggregation_mode = TreatmentMode::None;
    else if (a.aggregation == "beta")
      cfg.aggregation_mode = TreatmentMode::Beta;
    else if (a.aggregation == "theta-thetatr")
      cfg.aggregation_mode = TreatmentMode::ThetaTr;
    else
      throw UsageError("--aggregation must be none, beta or theta-thetatr");
  }
  const std::size_t n = d.size();
  const std::size_t J = d.n_covariates();
  Forest f = grow_forest(std::move(d.subjects), cfg, d.covariate_names);
  save_forest(f, a.out);

  std::cout << "method            " << spec.label() << "\n"
            << "subjects          " << n << "\n"
            << "covariates        " << J << "\n"
            << "trees             " << cfg.n_trees << "\n"
            << "max_depth         " << cfg.tree.max_depth << "\n"
            << "min_node          " << cfg.tree.min_node << "\n"
            << "mtry              " << cfg.tree.resolved_mtry(J) << "\n"
            << "subsample         " << cfg.subsample_fraction << " (" << subsample_size(n, cfg.subsample_fraction)
            << " per tree" << (cfg.stratified() ? ", stratified by treatment" : "") << ")\n"
            << "aggregation       Bernstein order " << cfg.aggregation_order << " on log time, support ["
            << f.aggregation_basis.lo() << ", " << f.aggregation_basis.hi() << "]\n"
            << "seed              " << cfg.master_seed << "\n";
  const std::vector<double> ones(f.subjects.size(), 1.0);
  const FitResult root = fit_design(f.design(), ones, cfg.resolved_aggregation_mode(), cfg.fit);
  std::cout << "root loglik       " << num(root.loglik) << (root.converged ? "" : " (not converged)") << "\n";
  if (!a.no_oob) {
    const OobResult oob = oob_loglik(f);
    std::cout << "oob loglik        " << num(oob.loglik) << " (" << oob.n_used << " of " << n << " subjects)\n";
  }
  std::cout << "model written to  " << a.out << "\n";
  return 0;
}

int cmd_predict(const std::string& model, const std::string& data, const std::string& grid_s,
                const std::string& arm, const std::string& out) {
  const Forest f = load_forest(model);
  const SurvData d = read_surv_csv(data);
  if (d.covariate_names != f.covariate_names) check_covariates(f, SurvData{{}, d.covariate_names});
  const std::vector<double> grid = parse_grid(grid_s);
  std::vector<int> arms;
  if (arm == "0" || arm == "1")
    arms = {std::stoi(arm)};
  else if (arm == "both")
    arms = {0, 1};
  else
    throw UsageError("--arm must be 0, 1 or both");
  if (!f.predictive() && arm != "0") throw UsageError("--arm applies to predictive models only");

  std::ofstream file;
  std::ostream& os = open_out(out, file);
  const std::size_t P = f.aggregation_basis.size();
  os << "row";
  if (f.predictive()) os << ",arm";
  for (std::size_t k = 0; k < P; ++k) os << ",theta" << k + 1;
  if (f.config.resolved_aggregation_mode() == TreatmentMode::ThetaTr)
    for (std::size_t k = 0; k < P; ++k) os << ",theta_tr" << k + 1;
  if (f.config.resolved_aggregation_mode() == TreatmentMode::Beta) os << ",beta";
  for (double t : grid) os << ",S(" << num(t) << ")";
  os << "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const ModelParams p = predict_params(f, d.subjects[i].covariates);
    for (int a : arms) {
      os << i + 1;
      if (f.predictive()) os << ',' << a;
      for (double v : p.theta) os << ',' << num(v);
      if (p.theta_tr)
        for (double v : *p.theta_tr) os << ',' << num(v);
      if (f.config.resolved_aggregation_mode() == TreatmentMode::Beta) os << ',' << num(p.beta.value_or(0.0));
      for (double s : predict_survivor(p, f.aggregation_basis, grid, a)) os << ',' << num(s);
      os << "\n";
    }
  }
  return 0;
}

int cmd_evaluate(const std::string& model, const std::string& data, const std::string& per_subject) {
  const Forest f = load_forest(model);
  const SurvData d = read_surv_csv(data);
  if (d.subjects.empty()) {
    std::cerr << "warning: validation file has no rows\n";
    std::cout << 0 << "\n";
    return 0;
  }
  check_covariates(f, d);
  const std::vector<double> c = oos_contributions(f, d.subjects);
  double total = 0.0;
  for (double v : c) total += v;
  std::cout << num(total) << "\n";
  if (!per_subject.empty()) {
    std::ofstream file;
    std::ostream& os = open_out(per_subject, file);
    os << "row,loglik\n";
    for (std::size_t i = 0; i < c.size(); ++i) os << i + 1 << ',' << num(c[i]) << "\n";
  }
  return 0;
}

int cmd_importance(const std::string& model, int n_perm, std::uint64_t seed, const std::string& out) {
  if (n_perm < 1) throw UsageError("--nperm must be >= 1");
  const Forest f = load_forest(model);
  const std::vector<double> imp = permutation_importance(f, n_perm, seed);
  std::vector<std::size_t> order(imp.size());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
  std::vector<std::size_t> rank(imp.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  std::ofstream file;
  std::ostream& os = open_out(out, file);
  os << "variable,importance,rank\n";
  for (std::size_t j = 0; j < imp.size(); ++j) os << f.covariate_names[j] << ',' << num(imp[j]) << ',' << rank[j] << "\n";
  return 0;
}

struct BenchArgs {
  std::string mode = "prognostic", scenario, dim = "low", methods, out, mtry;
  int reps = 10, trees = 250, max_depth = 10, min_node = 20, order = 5, n_learn = 250, n_valid = 500;
  std::uint64_t seed = 1;
  double censoring = 0.0;
  bool no_timing = false;
};

int cmd_bench(const BenchArgs& a) {
  if (a.reps < 1) throw UsageError("--reps must be >= 1");
  if (a.trees < 1) throw UsageError("--trees must be >= 1");
  Scenario sc;
  sc.mode = parse_mode(a.mode);
  sc.effect = parse_effect(a.scenario);
  sc.dim = parse_dim(a.dim);
  sc.n_learn = a.n_learn;
  sc.n_valid = a.n_valid;
  sc.seed = a.seed;
  sc.censoring_rate = a.censoring;
  sc.validate();
  std::vector<SplitSpec> methods;
  for (const auto& m : split(a.methods, ',')) {
    try {
      methods.push_back(SplitSpec::parse(m, a.order));
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }
  if (methods.empty()) throw UsageError("--methods is empty");
  ForestConfig cfg;
  cfg.n_trees = a.trees;
  cfg.tree.max_depth = a.max_depth;
  cfg.tree.min_node = a.min_node;
  const auto J = static_cast<std::size_t>(sc.n_covariates());
  cfg.tree.mtry = a.mtry.empty() ? (sc.dim == Dim::Low ? 0 : sqrt_mtry(J)) : parse_mtry(a.mtry, J);
  cfg.aggregation_order = a.order;
  cfg.fit_leaf_models = false;
  const auto rows = run_benchmark(sc, methods, a.reps, cfg);
  std::ofstream file;
  std::ostream& os = open_out(a.out, file);
  write_benchmark_csv(os, rows, !a.no_timing);
  return 0;
}

int cmd_ingest(const std::string& in, const std::string& out, IngestOptions opt,
               const std::vector<std::string>& ordinal) {
  for (const auto& spec : ordinal) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
      throw UsageError("--ordinal expects COLUMN=LEVEL1,LEVEL2,..., got '" + spec + "'");
    opt.ordinal[spec.substr(0, eq)] = split(spec.substr(eq + 1), ',');
  }
  const CsvTable t = ingest(read_csv_file(in), opt);
  parse_surv_table(t);
  std::ofstream file;
  std::ostream& os = open_out(out, file);
  write_csv(os, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformation and distributional survival forests"};
  app.require_subcommand(1);
  app.footer(
      "Data files: columns lower, upper (exact: lower = upper; right-censored: upper empty or 'inf';\n"
      "left-censored: lower empty or '0'; interval: lower < upper), optional treatment (0/1), all other\n"
      "columns numeric covariates. TRAFOREST_THREADS caps the number of worker threads.");

  std::string in, out, model, data, grid = "1", arm = "0", per_subject;
  IngestOptions iopt;
  std::vector<std::string> ordinal;
  auto* ingest_cmd = app.add_subcommand("ingest", "convert a raw CSV into the survival schema");
  ingest_cmd->add_option("--in", in, "raw CSV")->required();
  ingest_cmd->add_option("--out", out, "output CSV (default stdout)");
  ingest_cmd->add_option("--time", iopt.time_column, "follow-up time column");
  ingest_cmd->add_option("--event", iopt.event_column, "event indicator column (1 event, 0 right-censored)");
  ingest_cmd->add_option("--lower", iopt.lower_column, "lower bound column");
  ingest_cmd->add_option("--upper", iopt.upper_column, "upper bound column");
  ingest_cmd->add_option("--treatment", iopt.treatment_column, "treatment column");
  ingest_cmd->add_option("--treated", iopt.treated_level, "treatment level coded as 1");
  ingest_cmd->add_option("--ordinal", ordinal, "COLUMN=LEVEL1,LEVEL2,... coded 1, 2, ...");
  ingest_cmd->add_option("--drop", iopt.drop, "columns to discard");

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "grow a forest and write the model file");
  fit_cmd->add_option("--data", fa.data, "training CSV")->required();
  fit_cmd->add_option("--method", fa.method, "<W|Bs|NP>-<alpha|theta|alpha-beta|theta-beta|theta-thetatr>")
      ->capture_default_str();
  fit_cmd->add_option("--trees", fa.trees)->capture_default_str();
  fit_cmd->add_option("--max-depth", fa.max_depth)->capture_default_str();
  fit_cmd->add_option("--min-node", fa.min_node)->capture_default_str();
  fit_cmd->add_option("--mtry", fa.mtry, "INT, sqrt or all")->capture_default_str();
  fit_cmd->add_option("--subsample", fa.subsample, "subsample fraction (without replacement)")->capture_default_str();
  fit_cmd->add_option("--order", fa.order, "Bernstein order of node and aggregation models")->capture_default_str();
  fit_cmd->add_option("--aggregation", fa.aggregation, "none, beta or theta-thetatr (predictive default)");
  fit_cmd->add_option("--solver", fa.solver, "newton or spg")->capture_default_str();
  fit_cmd->add_option("--seed", fa.seed)->capture_default_str();
  fit_cmd->add_option("--out", fa.out, "model JSON")->required();
  fit_cmd->add_flag("--no-oob", fa.no_oob, "skip the out-of-bag log-likelihood");
  fit_cmd->add_flag("--no-leaf-models", fa.no_leaf_models, "do not cache leaf models");

  auto* predict_cmd = app.add_subcommand("predict", "conditional parameters and survivor curves");
  predict_cmd->add_option("--model", model)->required();
  predict_cmd->add_option("--data", data, "query CSV (response columns are ignored)")->required();
  predict_cmd->add_option("--grid", grid, "comma-separated time points")->capture_default_str();
  predict_cmd->add_option("--arm", arm, "0, 1 or both")->capture_default_str();
  predict_cmd->add_option("--out", out, "output CSV (default stdout)");

  auto* eval_cmd = app.add_subcommand("evaluate", "out-of-sample log-likelihood");
  eval_cmd->add_option("--model", model)->required();
  eval_cmd->add_option("--data", data)->required();
  eval_cmd->add_option("--per-subject", per_subject, "write per-subject contributions to this CSV");

  int n_perm = 1;
  std::uint64_t imp_seed = 1;
  auto* imp_cmd = app.add_subcommand("importance", "permutation variable importance");
  imp_cmd->add_option("--model", model)->required();
  imp_cmd->add_option("--nperm", n_perm)->capture_default_str();
  imp_cmd->add_option("--seed", imp_seed)->capture_default_str();
  imp_cmd->add_option("--out", out, "output CSV (default stdout)");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "simulation benchmark");
  bench_cmd->add_option("--mode", ba.mode, "prognostic or predictive")->capture_default_str();
  bench_cmd->add_option("--scenario", ba.scenario, "no, ph, non-ph or combined")->required();
  bench_cmd->add_option("--dim", ba.dim, "low or high")->capture_default_str();
  bench_cmd->add_option("--methods", ba.methods, "comma-separated methods, e.g. Bs-alpha,Bs-theta")->required();
  bench_cmd->add_option("--reps", ba.reps)->capture_default_str();
  bench_cmd->add_option("--trees", ba.trees)->capture_default_str();
  bench_cmd->add_option("--max-depth", ba.max_depth)->capture_default_str();
  bench_cmd->add_option("--min-node", ba.min_node)->capture_default_str();
  bench_cmd->add_option("--mtry", ba.mtry, "INT, sqrt or all (default: all in low, sqrt in high dimension)");
  bench_cmd->add_option("--order", ba.order)->capture_default_str();
  bench_cmd->add_option("--n-learn", ba.n_learn)->capture_default_str();
  bench_cmd->add_option("--n-valid", ba.n_valid)->capture_default_str();
  bench_cmd->add_option("--censoring", ba.censoring, "exponential censoring rate (0 = none)")->capture_default_str();
  bench_cmd->add_option("--seed", ba.seed)->capture_default_str();
  bench_cmd->add_option("--out", ba.out, "output CSV (default stdout)");
  bench_cmd->add_flag("--no-timing", ba.no_timing, "write NA for wallclock_s (byte-reproducible output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*ingest_cmd) return cmd_ingest(in, out, iopt, ordinal);
    if (*fit_cmd) return cmd_fit(fa);
    if (*predict_cmd) return cmd_predict(model, data, grid, arm, out);
    if (*eval_cmd) return cmd_evaluate(model, data, per_subject);
    if (*imp_cmd) return cmd_importance(model, n_perm, imp_seed, out);
    if (*bench_cmd) return cmd_bench(ba);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
