#pragma once

#include <Eigen/Dense>

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "traforest/response.hpp"

namespace traforest {

enum class BasisKind { Weibull, Bernstein, Nonparametric };

/// Lower bound imposed on the Weibull accelerator (second coefficient).
inline constexpr double kWeibullMinSlope = 1e-8;
/// Lower bound on successive Bernstein coefficient increments, so that the
/// linearly extrapolated log-cumulative hazard is strictly increasing.
inline constexpr double kBernsteinMinIncrement = 1e-8;

/// Linear inequality constraints D * theta >= lower.
struct ConstraintSet {
  Eigen::MatrixXd D;
  Eigen::VectorXd lower;

  bool satisfied(std::span<const double> theta, double tol) const;
};

/// Nelson-Aalen cumulative hazard: a right-continuous step function on the
/// distinct event times. Censored observations leave the risk set at their
/// lower bound; left- and interval-censored ones do not count as events.
class NelsonAalen {
 public:
  NelsonAalen() = default;
  static NelsonAalen fit(std::span<const SurvResponse> responses);
  static NelsonAalen fit(std::span<const SurvResponse> responses,
                         std::span<const double> weights);

  double operator()(double t) const;
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& cumhaz() const { return cumhaz_; }

 private:
  std::vector<double> times_;
  std::vector<double> cumhaz_;
};

/// Basis a(t) of the log-cumulative hazard a(t)^T theta.
///
/// Weibull: (1, log t). Bernstein: polynomial of the given order in the
/// rescaled log time u = (log t - lo) / (hi - lo), extended linearly in log t
/// outside [lo, hi]. Nonparametric: no parametric form; only carries a
/// Nelson-Aalen baseline for log-rank scores.
class Basis {
 public:
  static Basis weibull();
  static Basis bernstein(int order, double lo, double hi);
  static Basis nonparametric();
  static Basis nonparametric(NelsonAalen baseline);

  BasisKind kind() const { return kind_; }
  bool parametric() const { return kind_ != BasisKind::Nonparametric; }
  /// Number of coefficients P (0 for the nonparametric kind).
  std::size_t size() const;
  int order() const { return order_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }

  std::vector<double> eval(double t) const;
  std::vector<double> deriv(double t) const;
  void eval(double t, std::span<double> out) const;
  void deriv(double t, std::span<double> out) const;

  ConstraintSet constraints() const;
  /// Fitted Nelson-Aalen baseline; null when absent.
  const NelsonAalen* baseline() const { return baseline_.get(); }

 private:
  BasisKind kind_ = BasisKind::Weibull;
  int order_ = 1;
  double lo_ = 0.0;
  double hi_ = 1.0;
  std::shared_ptr<const NelsonAalen> baseline_;

  void check_time(double t) const;
};

/// Bernstein basis values of degree n at u (de Casteljau triangle).
void bernstein_values(int n, double u, std::span<double> out);
/// d/du of the Bernstein basis of degree n at u.
void bernstein_derivs(int n, double u, std::span<double> out);

/// [min, max] of the supplied log-times; needs two distinct finite values.
std::pair<double, double> default_support(std::span<const double> log_times);

}  // namespace traforest
