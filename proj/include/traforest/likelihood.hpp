#pragma once

#include <optional>
#include <span>
#include <vector>

#include "traforest/basis.hpp"
#include "traforest/response.hpp"

namespace traforest {

/// Baseline coefficients theta plus at most one treatment term: a log-hazard
/// shift beta or a time-varying deviation theta_tr (same length as theta).
struct ModelParams {
  std::vector<double> theta;
  std::optional<double> beta;
  std::optional<std::vector<double>> theta_tr;

  bool predictive() const { return beta.has_value() || theta_tr.has_value(); }
  /// Coefficients of the log-cumulative hazard in the given arm.
  std::vector<double> arm_theta(bool treated) const;
  /// Additive shift of the log-cumulative hazard in the given arm.
  double arm_shift(bool treated) const { return treated ? beta.value_or(0.0) : 0.0; }
};

/// Log-likelihood contribution and its partial derivatives with respect to
/// the log-cumulative hazard at the lower and upper bounds and, for exact
/// times, its time-derivative (slope).
struct Contribution {
  double loglik = 0.0;
  double d_lower = 0.0;
  double d_upper = 0.0;
  double d_slope = 0.0;
  /// Second derivatives; the slope enters only through log(slope), so it has
  /// no cross terms.
  double d2_lower = 0.0;
  double d2_upper = 0.0;
  double d2_lower_upper = 0.0;
  double d2_slope = 0.0;
  bool feasible = true;
};

/// Core four-case evaluation. `z_lower`/`z_upper` are the log-cumulative
/// hazards at the bounds (unused bounds are ignored), `slope` is z'(t) at an
/// exact time. An exact time with slope <= 0, or an interval with
/// z_upper <= z_lower, is infeasible: loglik is -inf and derivatives are 0.
Contribution contribution(SurvResponse::Kind kind, double z_lower, double z_upper, double slope);

/// log(1 - exp(-x)) for x >= 0, with a series branch for tiny x.
double log1mexp_neg(double x);

double loglik(const Basis& b, const ModelParams& p, const Subject& s);
std::vector<double> score_theta(const Basis& b, const ModelParams& p, const Subject& s);
double score_alpha(const Basis& b, const ModelParams& p, const Subject& s);
std::vector<double> score_alpha_beta(const Basis& b, const ModelParams& p, const Subject& s);
std::vector<double> score_theta_beta(const Basis& b, const ModelParams& p, const Subject& s);
std::vector<double> score_theta_thetatr(const Basis& b, const ModelParams& p, const Subject& s);

/// Sum of w_i * loglik_i. Subjects with zero weight are skipped.
double total_loglik(const Basis& b, const ModelParams& p, std::span<const Subject> subjects,
                    std::span<const double> weights);

/// Survivor function exp(-exp(z(t))) on a grid, for the given arm.
std::vector<double> survivor(const Basis& b, const ModelParams& p, std::span<const double> t_grid,
                             bool treated = false);

}  // namespace traforest
