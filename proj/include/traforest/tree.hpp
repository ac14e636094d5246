#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "traforest/basis.hpp"
#include "traforest/likelihood.hpp"
#include "traforest/optim.hpp"

namespace traforest {

enum class SplitFamily { Alpha, Theta, AlphaBeta, ThetaBeta, ThetaThetaTr };

/// Score family and node-model basis used for splitting, e.g. "Bs-theta".
struct SplitSpec {
  SplitFamily family = SplitFamily::Theta;
  BasisKind basis_kind = BasisKind::Bernstein;
  /// Bernstein order of the node model.
  int order = 5;

  /// Throws InvalidArgument for the combinations that have no implementation
  /// (nonparametric with anything but Alpha).
  void validate() const;
  bool predictive() const {
    return family == SplitFamily::AlphaBeta || family == SplitFamily::ThetaBeta ||
           family == SplitFamily::ThetaThetaTr;
  }
  /// Treatment term of the node model.
  TreatmentMode node_mode() const;
  /// Number of score columns for a basis with p coefficients.
  std::size_t n_scores(std::size_t p) const;

  /// "<W|Bs|NP>-<alpha|theta|alpha-beta|theta-beta|theta-thetatr>".
  std::string label() const;
  static SplitSpec parse(const std::string& label, int order = 5);
};

struct TreeConfig {
  int max_depth = 10;
  int min_node = 20;
  /// Candidate variables per node; 0 selects all of them.
  int mtry = 0;
  std::uint64_t seed = 1;
  /// Refit the node model in every node; otherwise the root model is reused.
  bool refit_nodes = true;
  FitConfig fit;

  void validate(std::size_t n_covariates) const;
  int resolved_mtry(std::size_t n_covariates) const;
};

/// ceil(sqrt(J)).
int sqrt_mtry(std::size_t n_covariates);

struct TreeNode {
  int var = -1;
  double cutpoint = 0.0;
  int left = -1;
  int right = -1;
  int depth = 0;
  /// Training indices (leaves only), ascending.
  std::vector<std::size_t> members;
  /// The node model could not be fitted, so splitting stopped here.
  bool fit_failed = false;
  /// Leaf model on the aggregation basis; filled by the forest when requested.
  std::optional<ModelParams> leaf_model;

  bool is_leaf() const { return var < 0; }
};

/// Nodes in depth-first order; node 0 is the root.
struct Tree {
  std::vector<TreeNode> nodes;

  int leaf_of(std::span<const double> x) const;
  std::vector<int> leaves() const;
  std::size_t depth() const;
  /// Variables used by at least one split.
  std::vector<int> split_variables() const;
};

struct SplitResult {
  int var = -1;
  double cutpoint = 0.0;
  double statistic = 0.0;
};

struct NodeScores {
  Eigen::MatrixXd scores;
  ModelParams params;
  bool ok = true;
};

/// Basis of the node model for `spec`; Bernstein support spans the finite
/// log times of `subjects`.
Basis split_basis(const SplitSpec& spec, std::span<const Subject> subjects);

/// Fits the node model on `subjects` and returns one score row per subject.
NodeScores node_scores(const SplitSpec& spec, const Basis& basis, std::span<const Subject> subjects,
                       const FitConfig& cfg = {});

/// Maximizes the standardized two-sample statistic of the scores over cuts
/// x_j <= c for the candidate variables. `x` holds one row per score row.
std::optional<SplitResult> best_split(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& x,
                                      std::span<const int> candidate_vars, int min_node);

/// Grows trees on subsets of a fixed training set; the node-model design is
/// evaluated once and shared by all trees. `subjects` must outlive the grower.
class TreeGrower {
 public:
  TreeGrower(std::span<const Subject> subjects, SplitSpec spec, TreeConfig cfg);

  /// Grows one tree on `subsample` with candidate variables drawn from `seed`.
  Tree grow(std::span<const std::size_t> subsample, std::uint64_t seed) const;

  const SplitSpec& spec() const { return spec_; }
  const TreeConfig& config() const { return cfg_; }

 private:
  struct Build;

  std::span<const Subject> subjects_;
  SplitSpec spec_;
  TreeConfig cfg_;
  std::size_t n_cov_ = 0;
  Basis basis_;
  std::shared_ptr<const LikelihoodDesign> design_;
  Eigen::MatrixXd x_;
};

Tree grow_tree(std::span<const Subject> subjects, std::span<const std::size_t> subsample,
               const SplitSpec& spec, const TreeConfig& cfg);

}  // namespace traforest
