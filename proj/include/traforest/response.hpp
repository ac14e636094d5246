#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace traforest {

/// One subject's survival observation. Times are positive reals; `upper` is
/// +inf for right-censoring and `lower` is 0 for left-censoring.
struct SurvResponse {
  enum class Kind { Exact, Right, Left, Interval };

  Kind kind = Kind::Exact;
  double lower = 0.0;
  double upper = 0.0;

  static SurvResponse exact(double t);
  static SurvResponse right(double lower);
  static SurvResponse left(double upper);
  static SurvResponse interval(double lower, double upper);

  /// Exact time, or the finite bounds of a censored observation.
  double time() const { return lower; }
  bool is_event() const { return kind == Kind::Exact; }
};

struct Subject {
  SurvResponse response;
  std::vector<double> covariates;
  std::optional<int> treatment;

  bool treated() const { return treatment.value_or(0) == 1; }
};

/// A dataset with named covariate columns.
struct SurvData {
  std::vector<Subject> subjects;
  std::vector<std::string> covariate_names;

  std::size_t size() const { return subjects.size(); }
  std::size_t n_covariates() const { return covariate_names.size(); }
  bool predictive() const;
};

/// Finite log-time bounds of the observations (exact times and censoring bounds).
std::vector<double> finite_log_times(const std::vector<Subject>& subjects);

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Exact-time density evaluated at a non-increasing log-cumulative hazard.
class InfeasibleLikelihood : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace traforest
