#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "traforest/basis.hpp"
#include "traforest/likelihood.hpp"
#include "traforest/optim.hpp"
#include "traforest/tree.hpp"

namespace traforest {

struct ForestConfig {
  int n_trees = 250;
  double subsample_fraction = 0.632;
  /// Defaults to true for predictive split methods.
  std::optional<bool> stratify_by_treatment;
  TreeConfig tree;
  SplitSpec spec;
  std::uint64_t master_seed = 1;
  /// Bernstein order of the aggregation model.
  int aggregation_order = 5;
  /// Defaults to ThetaTr for predictive split methods, None otherwise.
  std::optional<TreatmentMode> aggregation_mode;
  /// Fit and cache a model in every leaf (used by permutation importance).
  bool fit_leaf_models = true;
  /// Solver settings of the aggregation and leaf fits.
  FitConfig fit;

  void validate() const;
  bool stratified() const { return stratify_by_treatment.value_or(spec.predictive()); }
  TreatmentMode resolved_aggregation_mode() const;
};

/// ceil(fraction * n), computed so that e.g. 0.632 * 250 gives 158.
std::size_t subsample_size(std::size_t n, double fraction);

/// Subsamples without replacement, one per tree, each sorted ascending. With
/// stratification the treated count is round(m * n_treated / n).
std::vector<std::vector<std::size_t>> draw_subsamples(std::span<const Subject> subjects, int n_trees,
                                                      double fraction, bool stratify,
                                                      std::uint64_t master_seed);

struct Forest {
  ForestConfig config;
  std::vector<std::string> covariate_names;
  std::vector<Subject> subjects;
  Basis aggregation_basis;
  /// Aggregation model fitted on all training subjects; warm start for
  /// every local fit.
  ModelParams root_params;
  std::vector<Tree> trees;
  std::vector<std::vector<std::size_t>> subsamples;

  bool predictive() const { return config.resolved_aggregation_mode() != TreatmentMode::None; }
  std::size_t n_covariates() const { return covariate_names.size(); }
  const LikelihoodDesign& design() const { return *design_; }
  bool in_subsample(std::size_t tree, std::size_t i) const { return membership_[tree][i] != 0; }

  /// Rebuilds derived lookup tables; called after growing or loading.
  void finalize();

 private:
  std::shared_ptr<const LikelihoodDesign> design_;
  std::vector<std::vector<unsigned char>> membership_;
};

/// Grows a forest. Covariate names default to x1..xJ. When `subsamples` is
/// given it replaces the drawn index sets (one per tree).
Forest grow_forest(std::vector<Subject> subjects, const ForestConfig& cfg,
                   std::vector<std::string> covariate_names = {},
                   std::optional<std::vector<std::vector<std::size_t>>> subsamples = std::nullopt);

/// w_i(x): number of trees in which training subject i is in the subsample
/// and shares the terminal node of x.
std::vector<double> weights(const Forest& f, std::span<const double> x);

/// Weights of training subject i from the trees whose subsample excludes it.
std::vector<double> oob_weights(const Forest& f, std::size_t i);

/// Local maximum-likelihood fit of the aggregation model with weights(f, x).
FitResult predict_fit(const Forest& f, std::span<const double> x);
ModelParams predict_params(const Forest& f, std::span<const double> x);

/// Survivor curve S(t) = exp(-exp(a(t)^T theta)) for one arm.
std::vector<double> predict_survivor(const ModelParams& p, const Basis& b, std::span<const double> t_grid,
                                     std::optional<int> arm = std::nullopt);

/// Per-subject out-of-sample log-likelihood contributions.
std::vector<double> oos_contributions(const Forest& f, std::span<const Subject> validation);
double oos_loglik(const Forest& f, std::span<const Subject> validation);

struct OobResult {
  double loglik = 0.0;
  /// Contribution per training subject; NaN for subjects in every subsample.
  std::vector<double> per_subject;
  std::size_t n_used = 0;
};

/// Out-of-bag log-likelihood of the training subjects.
OobResult oob_loglik(const Forest& f);

/// Mean drop in out-of-subsample leaf-model log-likelihood per tree after
/// permuting one covariate, averaged over trees and `n_perm` permutations.
std::vector<double> permutation_importance(const Forest& f, int n_perm = 1, std::uint64_t seed = 1);

}  // namespace traforest
