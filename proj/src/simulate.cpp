#include "traforest/simulate.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "traforest/parallel.hpp"
#include "traforest/rng.hpp"

namespace traforest {

namespace {

std::span<const double> block(std::span<const double> x, std::size_t first) { return x.subspan(first, 5); }

}  // namespace

void Scenario::validate() const {
  if (mode == SimMode::Predictive && effect == Effect::No)
    throw InvalidArgument("the predictive setting has no 'no effect' scenario");
  if (n_learn < 2 || n_valid < 0) throw InvalidArgument("sample sizes must be positive");
  if (!(censoring_rate >= 0.0) || !std::isfinite(censoring_rate))
    throw InvalidArgument("censoring rate must be finite and non-negative");
}

int Scenario::n_covariates() const {
  if (mode == SimMode::Prognostic) return dim == Dim::Low ? 15 : 60;
  return dim == Dim::Low ? 25 : 70;
}

std::string Scenario::effect_name() const {
  switch (effect) {
    case Effect::No:
      return "no";
    case Effect::PH:
      return "ph";
    case Effect::NonPH:
      return "non-ph";
    case Effect::Combined:
      return "combined";
  }
  return "";
}

std::string Scenario::mode_name() const { return mode == SimMode::Prognostic ? "prognostic" : "predictive"; }
std::string Scenario::dim_name() const { return dim == Dim::Low ? "low" : "high"; }

SimMode parse_mode(const std::string& s) {
  if (s == "prognostic") return SimMode::Prognostic;
  if (s == "predictive") return SimMode::Predictive;
  throw InvalidArgument("unknown mode '" + s + "' (use prognostic or predictive)");
}

Effect parse_effect(const std::string& s) {
  if (s == "no") return Effect::No;
  if (s == "ph") return Effect::PH;
  if (s == "non-ph") return Effect::NonPH;
  if (s == "combined") return Effect::Combined;
  throw InvalidArgument("unknown scenario '" + s + "' (use no, ph, non-ph or combined)");
}

Dim parse_dim(const std::string& s) {
  if (s == "low") return Dim::Low;
  if (s == "high") return Dim::High;
  throw InvalidArgument("unknown dimension '" + s + "' (use low or high)");
}

double friedman(std::span<const double> x) {
  if (x.size() != 5) throw InvalidArgument("friedman takes exactly five inputs");
  for (double v : x)
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("friedman inputs must lie in [0, 1]");
  return 10.0 * std::sin(M_PI * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] +
         5.0 * x[4];
}

double friedman_star(std::span<const double> x) { return friedman(x) / 10.0 - 1.5; }

std::pair<double, double> true_xi_alpha(const Scenario& sc, std::span<const double> x, bool treated) {
  if (x.size() < static_cast<std::size_t>(sc.n_covariates()))
    throw InvalidArgument("covariate vector shorter than the scenario dimension");
  const bool shift = sc.effect == Effect::PH || sc.effect == Effect::Combined;
  const bool scale = sc.effect == Effect::NonPH || sc.effect == Effect::Combined;
  double alpha = 0.0;
  double log_xi = 0.0;
  if (sc.mode == SimMode::Prognostic) {
    if (shift) alpha = friedman_star(block(x, 0));
    if (scale) log_xi = friedman_star(block(x, 5));
  } else {
    if (shift) alpha = friedman_star(block(x, 0)) + (treated ? friedman_star(block(x, 5)) : 0.0);
    if (scale) log_xi = friedman_star(block(x, 10)) + (treated ? friedman_star(block(x, 15)) : 0.0);
  }
  return {std::exp(log_xi), alpha};
}

double weibull_time(double xi, double alpha, double e) {
  if (!(xi > 0.0) || !(e > 0.0)) throw InvalidArgument("weibull_time needs xi > 0 and e > 0");
  return std::exp((std::log(e) - alpha) / xi);
}

SimData gen_dataset(const Scenario& sc, std::size_t n, std::uint64_t seed) {
  sc.validate();
  const auto J = static_cast<std::size_t>(sc.n_covariates());
  Rng rng(seed);
  SimData d;
  d.subjects.resize(n);
  d.truth.xi.resize(n);
  d.truth.alpha.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Subject& s = d.subjects[i];
    s.covariates.resize(J);
    for (auto& v : s.covariates) v = rng.uniform();
    if (sc.mode == SimMode::Predictive) s.treatment = rng.bernoulli(0.5) ? 1 : 0;
    const auto [xi, alpha] = true_xi_alpha(sc, s.covariates, s.treated());
    d.truth.xi[i] = xi;
    d.truth.alpha[i] = alpha;
    // E in (0, inf): exponential draw that cannot be exactly zero.
    double e = 0.0;
    do {
      e = rng.exponential();
    } while (!(e > 0.0));
    const double t = weibull_time(xi, alpha, e);
    if (sc.censoring_rate > 0.0) {
      const double c = rng.exponential() / sc.censoring_rate;
      s.response = c < t && c > 0.0 ? SurvResponse::right(c) : SurvResponse::exact(t);
    } else {
      s.response = SurvResponse::exact(t);
    }
  }
  return d;
}

SimDraw draw_replicate(const Scenario& sc, int rep) {
  const std::uint64_t base = derive_seed(sc.seed, static_cast<std::uint64_t>(rep));
  SimDraw out;
  out.learn = gen_dataset(sc, static_cast<std::size_t>(sc.n_learn), derive_seed(base, 0));
  out.valid = gen_dataset(sc, static_cast<std::size_t>(sc.n_valid), derive_seed(base, 1));
  return out;
}

double true_loglik(std::span<const Subject> subjects, const TrueParams& truth) {
  if (truth.xi.size() != subjects.size() || truth.alpha.size() != subjects.size())
    throw InvalidArgument("true parameters and subjects differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& r = subjects[i].response;
    const double xi = truth.xi[i];
    const double alpha = truth.alpha[i];
    if (!(xi > 0.0)) throw InvalidArgument("xi must be positive");
    if (!(r.lower > 0.0)) throw InvalidArgument("survival times must be positive");
    const double lt = std::log(r.lower);
    const double z = xi * lt + alpha;
    switch (r.kind) {
      case SurvResponse::Kind::Exact:
        total += z - std::exp(z) + std::log(xi) - lt;
        break;
      case SurvResponse::Kind::Right:
        total += -std::exp(z);
        break;
      default:
        throw InvalidArgument("true_loglik supports exact and right-censored responses");
    }
  }
  return total;
}

std::vector<BenchmarkRow> run_benchmark(const Scenario& sc, std::span<const SplitSpec> methods, int n_reps,
                                        const ForestConfig& forest_cfg) {
  sc.validate();
  if (n_reps < 1) throw InvalidArgument("n_reps must be >= 1");
  if (methods.empty()) throw InvalidArgument("at least one method required");
  for (const auto& m : methods) {
    m.validate();
    if (sc.mode == SimMode::Predictive && !m.predictive() && !forest_cfg.aggregation_mode)
      throw InvalidArgument("method " + m.label() + " is prognostic but the scenario is predictive");
  }
  std::vector<BenchmarkRow> rows;
  for (int rep = 0; rep < n_reps; ++rep) {
    const SimDraw draw = draw_replicate(sc, rep);
    const double truth = true_loglik(draw.valid.subjects, draw.valid.truth);
    const std::uint64_t forest_seed = derive_seed(sc.seed ^ 0x5bd1e995ULL, static_cast<std::uint64_t>(rep));
    const bool stratify = forest_cfg.stratify_by_treatment.value_or(sc.mode == SimMode::Predictive);
    const auto subsamples = draw_subsamples(draw.learn.subjects, forest_cfg.n_trees,
                                            forest_cfg.subsample_fraction, stratify, forest_seed);
    for (const auto& m : methods) {
      ForestConfig cfg = forest_cfg;
      cfg.spec = m;
      cfg.master_seed = forest_seed;
      cfg.stratify_by_treatment = stratify;
      if (!cfg.aggregation_mode)
        cfg.aggregation_mode = sc.mode == SimMode::Predictive ? TreatmentMode::ThetaTr : TreatmentMode::None;
      const auto t0 = std::chrono::steady_clock::now();
      const Forest f = grow_forest(draw.learn.subjects, cfg, {}, subsamples);
      const double oos = oos_loglik(f, draw.valid.subjects);
      const auto t1 = std::chrono::steady_clock::now();
      BenchmarkRow row;
      row.scenario = sc.effect_name();
      row.mode = sc.mode_name();
      row.dim = sc.dim_name();
      row.method = m.label();
      row.rep = rep;
      row.oos_loglik = oos;
      row.true_loglik = truth;
      row.delta = oos - truth;
      row.wallclock_s = std::chrono::duration<double>(t1 - t0).count();
      rows.push_back(row);
    }
  }
  return rows;
}

void write_benchmark_csv(std::ostream& os, std::span<const BenchmarkRow> rows, bool with_wallclock) {
  os << "scenario,mode,dim,method,rep,oos_loglik,true_loglik,delta,wallclock_s\n";
  const auto old = os.precision(17);
  for (const auto& r : rows) {
    os << r.scenario << ',' << r.mode << ',' << r.dim << ',' << r.method << ',' << r.rep << ','
       << r.oos_loglik << ',' << r.true_loglik << ',' << r.delta << ',';
    if (with_wallclock)
      os << std::setprecision(4) << r.wallclock_s << std::setprecision(17);
    else
      os << "NA";
    os << '\n';
  }
  os.precision(old);
}

}  // namespace traforest
