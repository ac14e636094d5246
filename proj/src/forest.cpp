#include "traforest/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "traforest/parallel.hpp"
#include "traforest/rng.hpp"

namespace traforest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_query(const Forest& f, std::span<const double> x) {
  if (x.size() != f.n_covariates())
    throw InvalidArgument("query has " + std::to_string(x.size()) + " covariates, forest expects " +
                          std::to_string(f.n_covariates()));
}

FitResult local_fit(const Forest& f, std::span<const double> w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw InvalidArgument("all forest weights are zero");
  return fit_design(f.design(), w, f.config.resolved_aggregation_mode(), f.config.fit, &f.root_params);
}

ModelParams fit_leaf(const Forest& f, const TreeNode& leaf) {
  std::vector<double> w(f.subjects.size(), 0.0);
  for (std::size_t i : leaf.members) w[i] = 1.0;
  try {
    return fit_design(f.design(), w, f.config.resolved_aggregation_mode(), f.config.fit, &f.root_params)
        .params;
  } catch (const InvalidArgument&) {
    // Too few members for a fit of their own.
    return f.root_params;
  }
}

/// Difference of two log-likelihood values that is exactly zero when they agree.
double drop(double before, double after) { return before == after ? 0.0 : before - after; }

}  // namespace

void ForestConfig::validate() const {
  if (n_trees < 1) throw InvalidArgument("n_trees must be >= 1, got " + std::to_string(n_trees));
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw InvalidArgument("subsample_fraction must lie in (0, 1]");
  if (aggregation_order < 1) throw InvalidArgument("aggregation order must be >= 1");
  spec.validate();
  fit.validate();
}

TreatmentMode ForestConfig::resolved_aggregation_mode() const {
  if (aggregation_mode) return *aggregation_mode;
  return spec.predictive() ? TreatmentMode::ThetaTr : TreatmentMode::None;
}

std::size_t subsample_size(std::size_t n, double fraction) {
  const auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(m, 1, n);
}

std::vector<std::vector<std::size_t>> draw_subsamples(std::span<const Subject> subjects, int n_trees,
                                                      double fraction, bool stratify,
                                                      std::uint64_t master_seed) {
  const std::size_t n = subjects.size();
  const std::size_t m = subsample_size(n, fraction);
  std::vector<std::size_t> treated, control, all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < n; ++i) (subjects[i].treated() ? treated : control).push_back(i);
  std::size_t m1 = 0;
  if (stratify) {
    m1 = static_cast<std::size_t>(
        std::llround(static_cast<double>(m) * static_cast<double>(treated.size()) / static_cast<double>(n)));
    m1 = std::min(m1, treated.size());
    if (m - m1 > control.size()) m1 = m - control.size();
  }
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(n_trees));
  for (std::size_t b = 0; b < out.size(); ++b) {
    Rng rng(derive_seed(master_seed, 2 * b));
    std::vector<std::size_t> s;
    if (stratify) {
      s = rng.sample<std::size_t>(treated, m1);
      const auto c = rng.sample<std::size_t>(control, m - m1);
      s.insert(s.end(), c.begin(), c.end());
    } else {
      s = rng.sample<std::size_t>(all, m);
    }
    std::sort(s.begin(), s.end());
    out[b] = std::move(s);
  }
  return out;
}

void Forest::finalize() {
  if (!aggregation_basis.parametric()) throw InvalidArgument("aggregation basis must be parametric");
  design_ = std::make_shared<const LikelihoodDesign>(aggregation_basis, subjects);
  membership_.assign(subsamples.size(), std::vector<unsigned char>(subjects.size(), 0));
  for (std::size_t b = 0; b < subsamples.size(); ++b)
    for (std::size_t i : subsamples[b]) {
      if (i >= subjects.size()) throw InvalidArgument("subsample index out of range");
      membership_[b][i] = 1;
    }
}

Forest grow_forest(std::vector<Subject> subjects, const ForestConfig& cfg,
                   std::vector<std::string> covariate_names,
                   std::optional<std::vector<std::vector<std::size_t>>> subsamples) {
  cfg.validate();
  const std::size_t n = subjects.size();
  if (n < 2) throw InvalidArgument("a forest needs at least two subjects");
  const std::size_t J = subjects.front().covariates.size();
  if (covariate_names.empty())
    for (std::size_t j = 0; j < J; ++j) covariate_names.push_back("x" + std::to_string(j + 1));
  if (covariate_names.size() != J) throw InvalidArgument("covariate names do not match the covariates");
  cfg.tree.validate(J);
  const double needed = 2.0 * cfg.tree.min_node / cfg.subsample_fraction;
  if (static_cast<double>(n) < needed)
    throw InvalidArgument("dataset too small: " + std::to_string(n) + " subjects, need at least " +
                          std::to_string(static_cast<long>(std::ceil(needed))) +
                          " for min_node " + std::to_string(cfg.tree.min_node));
  const bool predictive_agg = cfg.resolved_aggregation_mode() != TreatmentMode::None;
  if (predictive_agg || cfg.stratified())
    for (std::size_t i = 0; i < n; ++i)
      if (!subjects[i].treatment)
        throw InvalidArgument("subject " + std::to_string(i + 1) + " lacks a treatment indicator");

  Forest f;
  f.config = cfg;
  f.covariate_names = std::move(covariate_names);
  f.subjects = std::move(subjects);
  const auto [lo, hi] = default_support(finite_log_times(f.subjects));
  f.aggregation_basis = Basis::bernstein(cfg.aggregation_order, lo, hi);
  if (subsamples) {
    if (subsamples->size() != static_cast<std::size_t>(cfg.n_trees))
      throw InvalidArgument("number of subsamples differs from n_trees");
    f.subsamples = std::move(*subsamples);
  } else {
    f.subsamples = draw_subsamples(f.subjects, cfg.n_trees, cfg.subsample_fraction, cfg.stratified(),
                                   cfg.master_seed);
  }
  f.finalize();

  const std::vector<double> ones(f.subjects.size(), 1.0);
  f.root_params = fit_design(f.design(), ones, cfg.resolved_aggregation_mode(), cfg.fit).params;

  const TreeGrower grower(f.subjects, cfg.spec, cfg.tree);
  f.trees.resize(f.subsamples.size());
  parallel_for(f.trees.size(), [&](std::size_t b) {
    Tree t = grower.grow(f.subsamples[b], derive_seed(cfg.master_seed, 2 * b + 1));
    if (cfg.fit_leaf_models)
      for (auto& node : t.nodes)
        if (node.is_leaf()) node.leaf_model = fit_leaf(f, node);
    f.trees[b] = std::move(t);
  });
  return f;
}

std::vector<double> weights(const Forest& f, std::span<const double> x) {
  check_query(f, x);
  std::vector<double> w(f.subjects.size(), 0.0);
  for (const auto& t : f.trees)
    for (std::size_t i : t.nodes[static_cast<std::size_t>(t.leaf_of(x))].members) w[i] += 1.0;
  return w;
}

std::vector<double> oob_weights(const Forest& f, std::size_t i) {
  if (i >= f.subjects.size()) throw InvalidArgument("subject index out of range");
  const auto& x = f.subjects[i].covariates;
  std::vector<double> w(f.subjects.size(), 0.0);
  for (std::size_t b = 0; b < f.trees.size(); ++b) {
    if (f.in_subsample(b, i)) continue;
    const Tree& t = f.trees[b];
    for (std::size_t k : t.nodes[static_cast<std::size_t>(t.leaf_of(x))].members) w[k] += 1.0;
  }
  return w;
}

FitResult predict_fit(const Forest& f, std::span<const double> x) { return local_fit(f, weights(f, x)); }

ModelParams predict_params(const Forest& f, std::span<const double> x) { return predict_fit(f, x).params; }

std::vector<double> predict_survivor(const ModelParams& p, const Basis& b, std::span<const double> t_grid,
                                     std::optional<int> arm) {
  if (arm && *arm != 0 && *arm != 1) throw InvalidArgument("arm must be 0 or 1");
  return survivor(b, p, t_grid, arm.value_or(0) == 1);
}

std::vector<double> oos_contributions(const Forest& f, std::span<const Subject> validation) {
  std::vector<double> out(validation.size(), 0.0);
  if (validation.empty()) return out;
  for (const auto& s : validation) check_query(f, s.covariates);
  const LikelihoodDesign vd(f.aggregation_basis, validation);
  parallel_for(validation.size(), [&](std::size_t i) {
    const ModelParams p = predict_params(f, validation[i].covariates);
    out[i] = vd.loglik(i, p);
  });
  return out;
}

double oos_loglik(const Forest& f, std::span<const Subject> validation) {
  const std::vector<double> c = oos_contributions(f, validation);
  return std::accumulate(c.begin(), c.end(), 0.0);
}

OobResult oob_loglik(const Forest& f) {
  OobResult r;
  r.per_subject.assign(f.subjects.size(), kNaN);
  parallel_for(f.subjects.size(), [&](std::size_t i) {
    const std::vector<double> w = oob_weights(f, i);
    if (!(std::accumulate(w.begin(), w.end(), 0.0) > 0.0)) return;
    r.per_subject[i] = f.design().loglik(i, local_fit(f, w).params);
  });
  for (double v : r.per_subject)
    if (!std::isnan(v)) {
      r.loglik += v;
      ++r.n_used;
    }
  return r;
}

std::vector<double> permutation_importance(const Forest& f, int n_perm, std::uint64_t seed) {
  if (n_perm < 1) throw InvalidArgument("n_perm must be >= 1");
  const std::size_t J = f.n_covariates();
  const std::size_t B = f.trees.size();
  // per_tree[b][j]: mean drop over permutations in tree b.
  std::vector<std::vector<double>> per_tree(B, std::vector<double>(J, 0.0));
  parallel_for(B, [&](std::size_t b) {
    const Tree& t = f.trees[b];
    std::vector<std::size_t> oob;
    for (std::size_t i = 0; i < f.subjects.size(); ++i)
      if (!f.in_subsample(b, i)) oob.push_back(i);
    if (oob.empty()) return;

    std::vector<std::optional<ModelParams>> models(t.nodes.size());
    auto model_of = [&](int leaf) -> const ModelParams& {
      auto& m = models[static_cast<std::size_t>(leaf)];
      if (!m) {
        const TreeNode& node = t.nodes[static_cast<std::size_t>(leaf)];
        m = node.leaf_model ? *node.leaf_model : fit_leaf(f, node);
      }
      return *m;
    };
    std::vector<int> leaf(oob.size());
    std::vector<double> base(oob.size());
    for (std::size_t k = 0; k < oob.size(); ++k) {
      leaf[k] = t.leaf_of(f.subjects[oob[k]].covariates);
      base[k] = f.design().loglik(oob[k], model_of(leaf[k]));
    }

    const std::vector<int> used = t.split_variables();
    Rng rng(derive_seed(seed, b));
    std::vector<double> x;
    for (int j : used) {
      double total = 0.0;
      for (int rep = 0; rep < n_perm; ++rep) {
        std::vector<std::size_t> perm = oob;
        rng.shuffle(perm);
        for (std::size_t k = 0; k < oob.size(); ++k) {
          x = f.subjects[oob[k]].covariates;
          x[static_cast<std::size_t>(j)] = f.subjects[perm[k]].covariates[static_cast<std::size_t>(j)];
          const int l = t.leaf_of(x);
          if (l == leaf[k]) continue;
          total += drop(base[k], f.design().loglik(oob[k], model_of(l)));
        }
      }
      per_tree[b][static_cast<std::size_t>(j)] = total / n_perm;
    }
  });
  std::vector<double> out(J, 0.0);
  for (const auto& v : per_tree)
    for (std::size_t j = 0; j < J; ++j) out[j] += v[j];
  for (double& v : out) v /= static_cast<double>(B);
  return out;
}

}  // namespace traforest
