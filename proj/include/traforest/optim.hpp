#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "traforest/basis.hpp"
#include "traforest/likelihood.hpp"

namespace traforest {

enum class Solver {
  /// Augmented Lagrangian with a spectral projected gradient inner loop.
  AugLagSpg,
  /// Projected Newton on the bound-constrained reparameterization.
  ProjectedNewton,
};

struct FitConfig {
  Solver solver = Solver::ProjectedNewton;
  int max_outer_iters = 50;
  int max_inner_iters = 500;
  double grad_tol = 1e-6;
  double constraint_tol = 1e-8;
  double penalty_growth = 10.0;

  void validate() const;
};

enum class TreatmentMode { None, Beta, ThetaTr };

struct FitResult {
  ModelParams params;
  /// Weighted log-likelihood sum_i w_i l_i at `params`.
  double loglik = 0.0;
  bool converged = false;
  /// The likelihood is unbounded (e.g. every observation censored in the
  /// same direction); `params` is the starting point.
  bool degenerate = false;
  /// A predictive fit fell back to the prognostic model (one arm empty).
  bool fallback = false;
  std::vector<std::size_t> active_constraints;
  int outer_iterations = 0;
  /// Best feasible log-likelihood after each outer iteration.
  std::vector<double> history;
};

/// Result of a baseline model with linear covariate shifts x^T alpha (and,
/// with treatment interactions, beta * 1(r=1) + x^T beta_x * 1(r=1)).
struct ShiftFitResult {
  FitResult fit;
  std::vector<double> alpha;
  std::vector<double> interactions;
  /// Columns removed before fitting: indices into [x_1..x_J, r, x_1:r..x_J:r].
  std::vector<std::size_t> dropped_columns;
};

// ---------------------------------------------------------------------------
// Generic solver: augmented Lagrangian over general rows G x >= h with a
// spectral projected gradient inner loop (Barzilai-Borwein steps, nonmonotone
// line search) that projects onto the simple bounds x >= lower.

struct LinearInequalities {
  /// Simple lower bounds (-inf for free coordinates); empty means none.
  Eigen::VectorXd lower;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
};

/// Returns the value to minimize and fills the gradient; +inf marks an
/// infeasible point.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct SolverResult {
  Eigen::VectorXd x;
  double value = 0.0;
  bool converged = false;
  bool feasible = false;
  int outer_iterations = 0;
  Eigen::VectorXd multipliers;
  std::vector<double> history;
};

SolverResult minimize_auglag(const Objective& f, const LinearInequalities& cons, Eigen::VectorXd x0,
                             const FitConfig& cfg);

// ---------------------------------------------------------------------------
// Transformation-model fits.

/// Basis evaluations of a fixed subject set, computed once and shared by many
/// weighted fits (forest aggregation, node models).
class LikelihoodDesign {
 public:
  LikelihoodDesign(Basis basis, std::span<const Subject> subjects);

  const Basis& basis() const { return basis_; }
  std::size_t size() const { return kinds_.size(); }
  std::size_t n_coef() const { return p_; }
  SurvResponse::Kind kind(std::size_t i) const { return kinds_[i]; }
  bool treated(std::size_t i) const { return treated_[i] != 0; }
  bool has_treatment(std::size_t i) const { return has_treatment_[i] != 0; }
  const double* a_lower(std::size_t i) const { return a_lower_.data() + i * p_; }
  const double* a_upper(std::size_t i) const { return a_upper_.data() + i * p_; }
  const double* a_slope(std::size_t i) const { return a_slope_.data() + i * p_; }
  const SurvResponse& response(std::size_t i) const { return responses_[i]; }

  /// log-likelihood of subject i under `p`.
  double loglik(std::size_t i, const ModelParams& p) const { return contribution(i, p).loglik; }
  Contribution contribution(std::size_t i, const ModelParams& p) const;

 private:
  Basis basis_;
  std::size_t p_;
  std::vector<SurvResponse::Kind> kinds_;
  std::vector<SurvResponse> responses_;
  std::vector<unsigned char> treated_;
  std::vector<unsigned char> has_treatment_;
  std::vector<double> a_lower_;
  std::vector<double> a_upper_;
  std::vector<double> a_slope_;
};

FitResult fit_unconditional(const Basis& b, std::span<const Subject> subjects,
                            const FitConfig& cfg = {});

FitResult fit_weighted(const Basis& b, std::span<const Subject> subjects,
                       std::span<const double> weights, const FitConfig& cfg = {},
                       const std::optional<std::vector<double>>& warm_start = std::nullopt);

/// Weighted fit of the prognostic (mode None) or predictive model on a
/// precomputed design. `warm_start` initializes the solver when feasible.
FitResult fit_design(const LikelihoodDesign& design, std::span<const double> weights,
                     TreatmentMode mode, const FitConfig& cfg = {},
                     const ModelParams* warm_start = nullptr);

FitResult fit_weighted_predictive(const Basis& b, std::span<const Subject> subjects,
                                  std::span<const double> weights, TreatmentMode mode,
                                  const FitConfig& cfg = {},
                                  const std::optional<ModelParams>& warm_start = std::nullopt);

ShiftFitResult fit_shift_model(const Basis& b, std::span<const Subject> subjects,
                               bool with_treatment_interactions, const FitConfig& cfg = {});

/// Starting coefficients: least-squares fit of cloglog(1 - KM) at event times,
/// made monotone by isotonic regression. Falls back to an increasing grid
/// over (-2, 2) with fewer than two distinct event times.
std::vector<double> initial_theta(const Basis& b, std::span<const SurvResponse> responses,
                                  std::span<const double> weights);

/// Least-squares projection onto non-decreasing sequences (pool adjacent violators).
std::vector<double> isotonic(std::span<const double> y);

}  // namespace traforest
