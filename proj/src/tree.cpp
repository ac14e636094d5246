#include "traforest/tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "traforest/rng.hpp"

namespace traforest {

namespace {

struct FamilyName {
  SplitFamily family;
  const char* name;
};

constexpr FamilyName kFamilies[] = {
    {SplitFamily::Alpha, "alpha"},
    {SplitFamily::Theta, "theta"},
    {SplitFamily::AlphaBeta, "alpha-beta"},
    {SplitFamily::ThetaBeta, "theta-beta"},
    {SplitFamily::ThetaThetaTr, "theta-thetatr"},
};

const char* basis_name(BasisKind k) {
  switch (k) {
    case BasisKind::Weibull:
      return "W";
    case BasisKind::Bernstein:
      return "Bs";
    case BasisKind::Nonparametric:
      return "NP";
  }
  return "?";
}

/// Score rows for `members` of `design` under `params`.
void fill_scores(const SplitSpec& spec, const LikelihoodDesign& design,
                 std::span<const std::size_t> members, const ModelParams& params,
                 Eigen::MatrixXd& out) {
  const std::size_t p = design.n_coef();
  out.resize(static_cast<Eigen::Index>(members.size()), static_cast<Eigen::Index>(spec.n_scores(p)));
  std::vector<double> g(p);
  for (std::size_t r = 0; r < members.size(); ++r) {
    const std::size_t i = members[r];
    const Contribution c = design.contribution(i, params);
    if (!c.feasible) throw InfeasibleLikelihood("node model infeasible for a member");
    const auto row = static_cast<Eigen::Index>(r);
    const double u = c.d_lower + c.d_upper;
    const double rr = design.treated(i) ? 1.0 : 0.0;
    if (spec.family == SplitFamily::Alpha) {
      out(row, 0) = u;
      continue;
    }
    if (spec.family == SplitFamily::AlphaBeta) {
      out(row, 0) = u;
      out(row, 1) = rr * u;
      continue;
    }
    const double* al = design.a_lower(i);
    const double* au = design.a_upper(i);
    const double* as = design.a_slope(i);
    for (std::size_t k = 0; k < p; ++k) g[k] = c.d_lower * al[k] + c.d_upper * au[k] + c.d_slope * as[k];
    for (std::size_t k = 0; k < p; ++k) out(row, static_cast<Eigen::Index>(k)) = g[k];
    if (spec.family == SplitFamily::ThetaBeta) out(row, static_cast<Eigen::Index>(p)) = rr * u;
    if (spec.family == SplitFamily::ThetaThetaTr)
      for (std::size_t k = 0; k < p; ++k) out(row, static_cast<Eigen::Index>(p + k)) = rr * g[k];
  }
}

/// Log-rank scores from a Nelson-Aalen baseline fitted on `members`.
void fill_logrank(std::span<const Subject> subjects, std::span<const std::size_t> members,
                  Eigen::MatrixXd& out) {
  std::vector<SurvResponse> responses;
  responses.reserve(members.size());
  for (std::size_t i : members) responses.push_back(subjects[i].response);
  const Basis np = Basis::nonparametric(NelsonAalen::fit(responses));
  const ModelParams none;
  out.resize(static_cast<Eigen::Index>(members.size()), 1);
  for (std::size_t r = 0; r < members.size(); ++r)
    out(static_cast<Eigen::Index>(r), 0) = score_alpha(np, none, subjects[members[r]]);
}

}  // namespace

void SplitSpec::validate() const {
  if (basis_kind == BasisKind::Nonparametric && family != SplitFamily::Alpha)
    throw InvalidArgument("split method " + label() +
                          " is not available: the nonparametric basis supports only the alpha "
                          "family (NP-theta, NP-theta-beta, NP-theta-thetatr and NP-alpha-beta "
                          "have no implementation)");
  if (basis_kind == BasisKind::Bernstein && order < 1)
    throw InvalidArgument("Bernstein order must be >= 1");
}

TreatmentMode SplitSpec::node_mode() const {
  switch (family) {
    case SplitFamily::AlphaBeta:
    case SplitFamily::ThetaBeta:
      return TreatmentMode::Beta;
    case SplitFamily::ThetaThetaTr:
      return TreatmentMode::ThetaTr;
    default:
      return TreatmentMode::None;
  }
}

std::size_t SplitSpec::n_scores(std::size_t p) const {
  switch (family) {
    case SplitFamily::Alpha:
      return 1;
    case SplitFamily::Theta:
      return p;
    case SplitFamily::AlphaBeta:
      return 2;
    case SplitFamily::ThetaBeta:
      return p + 1;
    case SplitFamily::ThetaThetaTr:
      return 2 * p;
  }
  return 0;
}

std::string SplitSpec::label() const {
  std::string out = basis_name(basis_kind);
  for (const auto& f : kFamilies)
    if (f.family == family) out += std::string("-") + f.name;
  return out;
}

SplitSpec SplitSpec::parse(const std::string& label, int order) {
  const auto dash = label.find('-');
  if (dash == std::string::npos)
    throw InvalidArgument("method '" + label + "' must look like <W|Bs|NP>-<family>");
  const std::string b = label.substr(0, dash);
  const std::string fam = label.substr(dash + 1);
  SplitSpec spec;
  spec.order = order;
  if (b == "W")
    spec.basis_kind = BasisKind::Weibull;
  else if (b == "Bs")
    spec.basis_kind = BasisKind::Bernstein;
  else if (b == "NP")
    spec.basis_kind = BasisKind::Nonparametric;
  else
    throw InvalidArgument("unknown basis '" + b + "' in method '" + label + "' (use W, Bs or NP)");
  bool found = false;
  for (const auto& f : kFamilies)
    if (fam == f.name) {
      spec.family = f.family;
      found = true;
    }
  if (!found)
    throw InvalidArgument("unknown score family '" + fam + "' in method '" + label +
                          "' (use alpha, theta, alpha-beta, theta-beta or theta-thetatr)");
  spec.validate();
  return spec;
}

int sqrt_mtry(std::size_t n_covariates) {
  return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_covariates)) - 1e-12)));
}

void TreeConfig::validate(std::size_t n_covariates) const {
  if (max_depth < 0) throw InvalidArgument("max_depth must be >= 0");
  if (min_node < 1) throw InvalidArgument("min_node must be >= 1");
  if (mtry < 0 || static_cast<std::size_t>(mtry) > n_covariates)
    throw InvalidArgument("mtry must lie in [1, " + std::to_string(n_covariates) +
                          "] (0 selects all variables), got " + std::to_string(mtry));
  fit.validate();
}

int TreeConfig::resolved_mtry(std::size_t n_covariates) const {
  return mtry == 0 ? static_cast<int>(n_covariates) : mtry;
}

int Tree::leaf_of(std::span<const double> x) const {
  int k = 0;
  while (!nodes[static_cast<std::size_t>(k)].is_leaf()) {
    const TreeNode& n = nodes[static_cast<std::size_t>(k)];
    if (static_cast<std::size_t>(n.var) >= x.size())
      throw InvalidArgument("covariate vector too short for this tree");
    k = x[static_cast<std::size_t>(n.var)] <= n.cutpoint ? n.left : n.right;
  }
  return k;
}

std::vector<int> Tree::leaves() const {
  std::vector<int> out;
  for (std::size_t k = 0; k < nodes.size(); ++k)
    if (nodes[k].is_leaf()) out.push_back(static_cast<int>(k));
  return out;
}

std::size_t Tree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return static_cast<std::size_t>(d);
}

std::vector<int> Tree::split_variables() const {
  std::vector<int> out;
  for (const auto& n : nodes)
    if (!n.is_leaf()) out.push_back(n.var);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Basis split_basis(const SplitSpec& spec, std::span<const Subject> subjects) {
  spec.validate();
  switch (spec.basis_kind) {
    case BasisKind::Weibull:
      return Basis::weibull();
    case BasisKind::Nonparametric:
      return Basis::nonparametric();
    case BasisKind::Bernstein: {
      const std::vector<Subject> copy(subjects.begin(), subjects.end());
      const auto [lo, hi] = default_support(finite_log_times(copy));
      return Basis::bernstein(spec.order, lo, hi);
    }
  }
  return Basis::weibull();
}

NodeScores node_scores(const SplitSpec& spec, const Basis& basis, std::span<const Subject> subjects,
                       const FitConfig& cfg) {
  spec.validate();
  std::vector<std::size_t> all(subjects.size());
  std::iota(all.begin(), all.end(), 0);
  NodeScores out;
  if (spec.basis_kind == BasisKind::Nonparametric) {
    fill_logrank(subjects, all, out.scores);
    return out;
  }
  if (basis.kind() != spec.basis_kind) throw InvalidArgument("basis does not match the split method");
  const LikelihoodDesign design(basis, subjects);
  const std::vector<double> w(subjects.size(), 1.0);
  const FitResult fit = fit_design(design, w, spec.node_mode(), cfg);
  out.params = fit.params;
  if (fit.degenerate || !fit.converged || !std::isfinite(fit.loglik)) {
    out.ok = false;
    return out;
  }
  fill_scores(spec, design, all, fit.params, out.scores);
  return out;
}

std::optional<SplitResult> best_split(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& x,
                                      std::span<const int> candidate_vars, int min_node) {
  const Eigen::Index n = scores.rows();
  if (x.rows() != n) throw InvalidArgument("scores and covariates differ in row count");
  if (min_node < 1) throw InvalidArgument("min_node must be >= 1");
  if (n < 2 * static_cast<Eigen::Index>(min_node) || scores.cols() == 0) return std::nullopt;

  // Whiten once per node: T = |w_L - (n_L/n) w|^2 / c(n_L) with w = S V^+1/2.
  const Eigen::VectorXd total = scores.colwise().sum().transpose();
  const Eigen::MatrixXd cross = scores.transpose() * scores;
  const Eigen::MatrixXd V = cross - total * total.transpose() / static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(V);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double cutoff = std::max(1e-10 * lambda.maxCoeff(), 1e-13 * cross.trace());
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < lambda.size(); ++k)
    if (lambda[k] > cutoff && lambda[k] > 0.0) keep.push_back(k);
  if (keep.empty()) return std::nullopt;
  Eigen::MatrixXd proj(scores.cols(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k)
    proj.col(static_cast<Eigen::Index>(k)) = eig.eigenvectors().col(keep[k]) / std::sqrt(lambda[keep[k]]);
  const Eigen::MatrixXd W = scores * proj;
  const Eigen::RowVectorXd wtot = W.colwise().sum();

  std::vector<int> vars(candidate_vars.begin(), candidate_vars.end());
  std::sort(vars.begin(), vars.end());
  std::optional<SplitResult> best;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  Eigen::RowVectorXd wl(W.cols());
  const double nd = static_cast<double>(n);
  for (int j : vars) {
    if (j < 0 || j >= x.cols()) throw InvalidArgument("candidate variable out of range");
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return x(a, j) < x(b, j); });
    wl.setZero();
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
      wl += W.row(order[static_cast<std::size_t>(k)]);
      const Eigen::Index nl = k + 1;
      if (nl < min_node) continue;
      if (n - nl < min_node) break;
      const double xa = x(order[static_cast<std::size_t>(k)], j);
      const double xb = x(order[static_cast<std::size_t>(k + 1)], j);
      if (!(xa < xb)) continue;
      const double nld = static_cast<double>(nl);
      const double c = nld * (nd - nld) / (nd * (nd - 1.0));
      const double t = (wl - (nld / nd) * wtot).squaredNorm() / c;
      if (!(t > 0.0)) continue;
      if (!best || t > best->statistic * (1.0 + 1e-12)) {
        double cut = 0.5 * (xa + xb);
        if (!(cut < xb)) cut = xa;
        best = SplitResult{j, cut, t};
      }
    }
  }
  return best;
}

struct TreeGrower::Build {
  const TreeGrower& g;
  Rng rng;
  Tree tree;
  std::optional<ModelParams> root;

  int node(std::vector<std::size_t> members, int depth, const ModelParams* parent) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes.back().depth = depth;
    auto leaf = [&](bool failed) {
      TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
      n.members = std::move(members);
      n.fit_failed = failed;
      return id;
    };
    const auto min_node = static_cast<std::size_t>(g.cfg_.min_node);
    if (depth >= g.cfg_.max_depth || members.size() < 2 * min_node || g.n_cov_ == 0) return leaf(false);

    std::vector<int> all(g.n_cov_);
    std::iota(all.begin(), all.end(), 0);
    const std::vector<int> candidates =
        rng.sample<int>(all, static_cast<std::size_t>(g.cfg_.resolved_mtry(g.n_cov_)));

    NodeScores ns;
    try {
      ns = score_node(members, parent);
    } catch (const InfeasibleLikelihood&) {
      ns.ok = false;
    }
    if (!ns.ok) return leaf(true);

    Eigen::MatrixXd xs(static_cast<Eigen::Index>(members.size()), g.x_.cols());
    for (std::size_t r = 0; r < members.size(); ++r)
      xs.row(static_cast<Eigen::Index>(r)) = g.x_.row(static_cast<Eigen::Index>(members[r]));
    const auto split = best_split(ns.scores, xs, candidates, g.cfg_.min_node);
    if (!split) return leaf(false);

    std::vector<std::size_t> left, right;
    for (std::size_t i : members)
      (g.x_(static_cast<Eigen::Index>(i), split->var) <= split->cutpoint ? left : right).push_back(i);
    members.clear();
    members.shrink_to_fit();
    const ModelParams here = ns.params;
    const int l = node(std::move(left), depth + 1, &here);
    const int r = node(std::move(right), depth + 1, &here);
    TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
    n.var = split->var;
    n.cutpoint = split->cutpoint;
    n.left = l;
    n.right = r;
    return id;
  }

  NodeScores score_node(const std::vector<std::size_t>& members, const ModelParams* parent) {
    NodeScores out;
    if (g.spec_.basis_kind == BasisKind::Nonparametric) {
      fill_logrank(g.subjects_, members, out.scores);
      return out;
    }
    const LikelihoodDesign& design = *g.design_;
    if (!g.cfg_.refit_nodes && root) {
      out.params = *root;
      fill_scores(g.spec_, design, members, out.params, out.scores);
      return out;
    }
    std::vector<double> w(design.size(), 0.0);
    for (std::size_t i : members) w[i] = 1.0;
    const FitResult fit = fit_design(design, w, g.spec_.node_mode(), g.cfg_.fit, parent);
    if (fit.degenerate || !fit.converged || !std::isfinite(fit.loglik)) {
      out.ok = false;
      return out;
    }
    out.params = fit.params;
    if (!root) root = fit.params;
    fill_scores(g.spec_, design, members, out.params, out.scores);
    return out;
  }
};

TreeGrower::TreeGrower(std::span<const Subject> subjects, SplitSpec spec, TreeConfig cfg)
    : subjects_(subjects), spec_(spec), cfg_(std::move(cfg)) {
  spec_.validate();
  if (subjects.empty()) throw InvalidArgument("no subjects to grow a tree on");
  n_cov_ = subjects.front().covariates.size();
  cfg_.validate(n_cov_);
  x_.resize(static_cast<Eigen::Index>(subjects.size()), static_cast<Eigen::Index>(n_cov_));
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    if (s.covariates.size() != n_cov_)
      throw InvalidArgument("subject " + std::to_string(i + 1) + " has " +
                            std::to_string(s.covariates.size()) + " covariates, expected " +
                            std::to_string(n_cov_));
    if (spec_.predictive() && !s.treatment)
      throw InvalidArgument("predictive split method " + spec_.label() +
                            " requires a treatment indicator for every subject");
    for (std::size_t j = 0; j < n_cov_; ++j) {
      if (std::isnan(s.covariates[j]))
        throw InvalidArgument("subject " + std::to_string(i + 1) + " has a NaN covariate");
      x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s.covariates[j];
    }
  }
  basis_ = split_basis(spec_, subjects);
  if (basis_.parametric()) design_ = std::make_shared<const LikelihoodDesign>(basis_, subjects);
}

Tree TreeGrower::grow(std::span<const std::size_t> subsample, std::uint64_t seed) const {
  if (subsample.empty()) throw InvalidArgument("empty subsample");
  std::vector<std::size_t> members(subsample.begin(), subsample.end());
  std::sort(members.begin(), members.end());
  if (members.back() >= subjects_.size()) throw InvalidArgument("subsample index out of range");
  if (std::adjacent_find(members.begin(), members.end()) != members.end())
    throw InvalidArgument("subsample indices must be distinct");
  Build b{*this, Rng(seed), Tree{}, std::nullopt};
  b.node(std::move(members), 0, nullptr);
  return std::move(b.tree);
}

Tree grow_tree(std::span<const Subject> subjects, std::span<const std::size_t> subsample,
               const SplitSpec& spec, const TreeConfig& cfg) {
  const TreeGrower grower(subjects, spec, cfg);
  return grower.grow(subsample, cfg.seed);
}

}  // namespace traforest
