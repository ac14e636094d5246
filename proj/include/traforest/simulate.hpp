#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "traforest/forest.hpp"
#include "traforest/response.hpp"
#include "traforest/tree.hpp"

namespace traforest {

enum class SimMode { Prognostic, Predictive };
enum class Effect { No, PH, NonPH, Combined };
enum class Dim { Low, High };

/// Weibull data-generating process P(T <= t | x, r) = 1 - exp(-exp(xi log t + alpha)).
struct Scenario {
  SimMode mode = SimMode::Prognostic;
  Effect effect = Effect::PH;
  Dim dim = Dim::Low;
  int n_learn = 250;
  int n_valid = 500;
  std::uint64_t seed = 1;
  /// Rate of independent exponential right-censoring; 0 disables censoring.
  double censoring_rate = 0.0;

  void validate() const;
  /// J: 15/60 prognostic, 25/70 predictive (low/high).
  int n_covariates() const;
  std::string effect_name() const;
  std::string mode_name() const;
  std::string dim_name() const;
};

SimMode parse_mode(const std::string& s);
Effect parse_effect(const std::string& s);
Dim parse_dim(const std::string& s);

/// Per-subject scale xi (> 0) and shift alpha.
struct TrueParams {
  std::vector<double> xi;
  std::vector<double> alpha;
};

struct SimData {
  std::vector<Subject> subjects;
  TrueParams truth;
};

/// 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5 for inputs in [0, 1].
double friedman(std::span<const double> x);
/// friedman(x) / 10 - 1.5, mapping [0, 30] onto [-1.5, 1.5].
double friedman_star(std::span<const double> x);

/// (xi, alpha) of one subject.
std::pair<double, double> true_xi_alpha(const Scenario& sc, std::span<const double> x, bool treated);

/// Survival time by inversion: exp((log e - alpha) / xi).
double weibull_time(double xi, double alpha, double e);

/// n subjects drawn from the scenario with the given seed.
SimData gen_dataset(const Scenario& sc, std::size_t n, std::uint64_t seed);

struct SimDraw {
  SimData learn;
  SimData valid;
};

/// Learning and validation samples of repetition `rep`.
SimDraw draw_replicate(const Scenario& sc, int rep);

/// Log-likelihood at the true parameters; right-censored subjects contribute
/// log S(t).
double true_loglik(std::span<const Subject> subjects, const TrueParams& truth);

struct BenchmarkRow {
  std::string scenario;
  std::string mode;
  std::string dim;
  std::string method;
  int rep = 0;
  double oos_loglik = 0.0;
  double true_loglik = 0.0;
  double delta = 0.0;
  double wallclock_s = 0.0;
};

/// Grows one forest per method and repetition on common subsamples and
/// reports the out-of-sample log-likelihood difference to the truth.
/// `forest_cfg.spec` is replaced by each method.
std::vector<BenchmarkRow> run_benchmark(const Scenario& sc, std::span<const SplitSpec> methods, int n_reps,
                                        const ForestConfig& forest_cfg);

void write_benchmark_csv(std::ostream& os, std::span<const BenchmarkRow> rows, bool with_wallclock = true);

}  // namespace traforest
