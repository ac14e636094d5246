#include "traforest/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <string>

namespace traforest {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Spectral projected gradient (Birgin, Martinez & Raydan): Barzilai-Borwein
// steps projected onto simple lower bounds, nonmonotone Armijo line search
// with memory 10.
struct InnerResult {
  bool converged = false;
  double value = kInf;
};

void project(Eigen::VectorXd& x, const Eigen::VectorXd& lower) {
  if (lower.size() == 0) return;
  x = x.cwiseMax(lower);
}

InnerResult spg(const Objective& f, Eigen::VectorXd& x, const Eigen::VectorXd& lower, double tol,
                int max_iter) {
  constexpr int kMemory = 10;
  constexpr double kGamma = 1e-4;
  constexpr double kStepMin = 1e-10;
  constexpr double kStepMax = 1e8;

  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n), gn(n), xn(n), d(n), pg(n);
  project(x, lower);
  double fx = f(x, g);
  InnerResult res;
  res.value = fx;
  if (!std::isfinite(fx)) return res;

  auto pg_norm = [&](const Eigen::VectorXd& at, const Eigen::VectorXd& grad) {
    pg = at - grad;
    project(pg, lower);
    return (pg - at).lpNorm<Eigen::Infinity>();
  };

  std::deque<double> recent{fx};
  double gnorm = pg_norm(x, g);
  double step = std::clamp(1.0 / std::max(gnorm, 1e-12), kStepMin, kStepMax);

  for (int it = 0; it < max_iter && gnorm > tol; ++it) {
    d = x - step * g;
    project(d, lower);
    d -= x;
    const double gtd = g.dot(d);
    const double fmax = *std::max_element(recent.begin(), recent.end());
    double alpha = 1.0;
    double fn = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 80; ++ls) {
      xn = x + alpha * d;
      fn = f(xn, gn);
      if (std::isfinite(fn) && fn <= fmax + kGamma * alpha * gtd) {
        accepted = true;
        break;
      }
      if (!std::isfinite(fn)) {
        alpha *= 0.1;
        continue;
      }
      const double trial = -0.5 * alpha * alpha * gtd / (fn - fx - alpha * gtd);
      alpha = (trial >= 0.1 * alpha && trial <= 0.9 * alpha) ? trial : 0.5 * alpha;
    }
    if (!accepted) break;

    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = gn - g;
    const double sty = s.dot(y);
    step = sty <= 0.0 ? kStepMax : std::clamp(s.squaredNorm() / sty, kStepMin, kStepMax);
    const bool stalled = s.lpNorm<Eigen::Infinity>() <= 1e-15 * (1.0 + x.lpNorm<Eigen::Infinity>());
    x = xn;
    g = gn;
    fx = fn;
    gnorm = pg_norm(x, g);
    recent.push_back(fx);
    if (static_cast<int>(recent.size()) > kMemory) recent.pop_front();
    if (stalled) break;
  }
  res.value = fx;
  res.converged = gnorm <= tol;
  return res;
}


struct NewtonResult {
  Eigen::VectorXd y;
  double value = kInf;
  bool converged = false;
  int iterations = 0;
  std::vector<double> history;
};

using HessianObjective =
    std::function<double(const Eigen::VectorXd& y, Eigen::VectorXd& grad, Eigen::MatrixXd* hess)>;

/// Projected Newton for simple lower bounds (Bertsekas): coordinates at or
/// near their bound with a gradient pushing outward are held fixed, the rest
/// take a damped Newton step, and the step is projected back.
NewtonResult projected_newton(const HessianObjective& f, Eigen::VectorXd y,
                              const Eigen::VectorXd& lower, const FitConfig& cfg) {
  const Eigen::Index n = y.size();
  NewtonResult res;
  project(y, lower);
  Eigen::VectorXd g(n), gn(n), yn(n), d(n);
  Eigen::MatrixXd H(n, n);
  double fy = f(y, g, &H);
  if (!std::isfinite(fy)) {
    res.y = y;
    return res;
  }
  for (int it = 0; it < cfg.max_inner_iters; ++it) {
    res.iterations = it + 1;
    Eigen::VectorXd pg = y - g;
    project(pg, lower);
    pg -= y;
    const double pg_norm = pg.lpNorm<Eigen::Infinity>();
    if (pg_norm <= cfg.grad_tol) {
      res.converged = true;
      break;
    }
    const double eps = std::min(1e-3, pg_norm);
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!(y[j] - lower[j] <= eps && g[j] > 0.0)) free.push_back(j);

    d.setZero();
    const auto nf = static_cast<Eigen::Index>(free.size());
    if (nf > 0) {
      Eigen::MatrixXd Hf(nf, nf);
      Eigen::VectorXd gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = g[free[a]];
        for (Eigen::Index b = 0; b < nf; ++b) Hf(a, b) = H(free[a], free[b]);
      }
      const double scale = std::max(Hf.diagonal().cwiseAbs().maxCoeff(), 1e-12);
      double mu = 0.0;
      Eigen::VectorXd df;
      for (int attempt = 0; attempt < 30; ++attempt) {
        Eigen::MatrixXd M = Hf;
        M.diagonal().array() += mu;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
          df = -ldlt.solve(gf);
          if (df.allFinite() && df.dot(gf) < 0.0) break;
        }
        df.resize(0);
        mu = mu == 0.0 ? 1e-10 * scale : mu * 10.0;
      }
      if (df.size() == 0) df = -gf / scale;
      for (Eigen::Index a = 0; a < nf; ++a) d[free[a]] = df[a];
    }

    double alpha = 1.0;
    bool accepted = false;
    double fn = kInf;
    for (int ls = 0; ls < 60; ++ls) {
      yn = y + alpha * d;
      project(yn, lower);
      fn = f(yn, gn, nullptr);
      if (std::isfinite(fn) && fn <= fy + 1e-4 * g.dot(yn - y)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const bool stalled = (yn - y).lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + y.lpNorm<Eigen::Infinity>());
    y = yn;
    fy = f(y, g, &H);
    res.history.push_back(fy);
    if (stalled) break;
  }
  res.y = y;
  res.value = fy;
  return res;
}
}  // namespace

void FitConfig::validate() const {
  if (max_outer_iters <= 0 || max_inner_iters <= 0 || !(grad_tol > 0.0) ||
      !(constraint_tol > 0.0) || !(penalty_growth > 1.0))
    throw InvalidArgument("fit configuration: iteration counts and tolerances must be positive, "
                          "penalty_growth > 1");
}

SolverResult minimize_auglag(const Objective& f, const LinearInequalities& cons, Eigen::VectorXd x0,
                             const FitConfig& cfg) {
  cfg.validate();
  if (cons.lower.size() != 0 && cons.lower.size() != x0.size())
    throw InvalidArgument("bound vector length differs from the parameter length");
  const Eigen::Index m = cons.G.rows();
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
  double rho = 10.0;

  SolverResult out;
  Eigen::VectorXd grad(x0.size());
  project(x0, cons.lower);

  auto violation = [&](const Eigen::VectorXd& x) {
    if (m == 0) return 0.0;
    return std::max(0.0, -(cons.G * x - cons.h).minCoeff());
  };
  Eigen::VectorXd best_x = x0;
  double best_value = kInf;
  {
    const double f0 = f(x0, grad);
    if (std::isfinite(f0) && violation(x0) <= cfg.constraint_tol) best_value = f0;
  }

  Eigen::VectorXd x = std::move(x0);
  double prev_violation = kInf;
  for (int outer = 1; outer <= cfg.max_outer_iters; ++outer) {
    out.outer_iterations = outer;
    const Objective lagrangian = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
      const double v = f(z, g);
      if (!std::isfinite(v) || m == 0) return v;
      const Eigen::VectorXd c = cons.G * z - cons.h;
      const Eigen::VectorXd shifted = (lambda - rho * c).cwiseMax(0.0);
      g -= cons.G.transpose() * shifted;
      return v + (shifted.squaredNorm() - lambda.squaredNorm()) / (2.0 * rho);
    };
    const InnerResult inner = spg(lagrangian, x, cons.lower, cfg.grad_tol, cfg.max_inner_iters);

    const double viol = violation(x);
    const double value = f(x, grad);
    if (std::isfinite(value) && viol <= cfg.constraint_tol && value < best_value) {
      best_value = value;
      best_x = x;
    }
    out.history.push_back(best_value);

    if (m == 0) {
      // Restart the inner loop while it is still making progress.
      out.converged = inner.converged;
      if (inner.converged || !(inner.value < prev_violation - 1e-12 * std::abs(inner.value))) break;
      prev_violation = inner.value;
      continue;
    }
    const Eigen::VectorXd c = cons.G * x - cons.h;
    const Eigen::VectorXd next = (lambda - rho * c).cwiseMax(0.0);
    const double complementarity = c.cwiseMin(next).cwiseAbs().maxCoeff();
    lambda = next;
    if (inner.converged && viol <= cfg.constraint_tol &&
        complementarity <= std::max(cfg.constraint_tol, cfg.grad_tol)) {
      out.converged = true;
      break;
    }
    if (viol > 0.25 * prev_violation) rho *= cfg.penalty_growth;
    prev_violation = viol;
  }

  out.multipliers = lambda;
  if (out.converged && violation(x) <= cfg.constraint_tol) {
    out.x = x;
    out.value = f(x, grad);
    out.feasible = std::isfinite(out.value);
  } else if (std::isfinite(best_value)) {
    out.x = best_x;
    out.value = best_value;
    out.feasible = true;
  } else {
    out.x = x;
    out.value = f(x, grad);
    out.feasible = false;
  }
  return out;
}

// ---------------------------------------------------------------------------

LikelihoodDesign::LikelihoodDesign(Basis basis, std::span<const Subject> subjects)
    : basis_(std::move(basis)), p_(basis_.size()) {
  if (!basis_.parametric()) throw UnsupportedOperation("design requires a parametric basis");
  const std::size_t n = subjects.size();
  kinds_.resize(n);
  responses_.resize(n);
  treated_.assign(n, 0);
  has_treatment_.assign(n, 0);
  a_lower_.assign(n * p_, 0.0);
  a_upper_.assign(n * p_, 0.0);
  a_slope_.assign(n * p_, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = subjects[i].response;
    kinds_[i] = r.kind;
    responses_[i] = r;
    treated_[i] = subjects[i].treated() ? 1 : 0;
    has_treatment_[i] = subjects[i].treatment ? 1 : 0;
    std::span<double> lo(a_lower_.data() + i * p_, p_);
    std::span<double> up(a_upper_.data() + i * p_, p_);
    std::span<double> sl(a_slope_.data() + i * p_, p_);
    switch (r.kind) {
      case SurvResponse::Kind::Exact:
        basis_.eval(r.lower, lo);
        basis_.deriv(r.lower, sl);
        break;
      case SurvResponse::Kind::Right:
        basis_.eval(r.lower, lo);
        break;
      case SurvResponse::Kind::Left:
        basis_.eval(r.upper, up);
        break;
      case SurvResponse::Kind::Interval:
        basis_.eval(r.lower, lo);
        basis_.eval(r.upper, up);
        break;
    }
  }
}

namespace {

double dotp(const double* a, const double* b, std::size_t p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p; ++k) s += a[k] * b[k];
  return s;
}

struct Layout {
  std::size_t p = 0;
  TreatmentMode mode = TreatmentMode::None;
  std::size_t q = 0;  // linear shift columns

  std::size_t treat_size() const {
    return mode == TreatmentMode::Beta ? 1 : mode == TreatmentMode::ThetaTr ? p : 0;
  }
  std::size_t shift_offset() const { return p + treat_size(); }
  std::size_t size() const { return shift_offset() + q; }
};

class DesignObjective {
 public:
  DesignObjective(const LikelihoodDesign& d, std::vector<std::size_t> idx, std::vector<double> w,
                  Layout layout, const std::vector<double>* shift = nullptr)
      : d_(d), idx_(std::move(idx)), w_(std::move(w)), layout_(layout), shift_(shift) {
    wsum_ = std::accumulate(w_.begin(), w_.end(), 0.0);
  }

  double weight_sum() const { return wsum_; }

  /// Negative weighted mean log-likelihood, with gradient and (optionally)
  /// Hessian on the same scale.
  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd* H = nullptr) const {
    const double total = accumulate(x, &g, H);
    if (!std::isfinite(total) || !g.allFinite()) return kInf;
    g /= -wsum_;
    if (H != nullptr) *H /= -wsum_;
    return -total / wsum_;
  }

  double loglik(const Eigen::VectorXd& x) const { return accumulate(x, nullptr, nullptr); }

 private:
  /// Writes d z / d x for a basis row `a` of subject i into `v`.
  void direction(std::size_t i, const double* a, double eta_weight, Eigen::VectorXd& v) const {
    const std::size_t p = layout_.p;
    const std::size_t so = layout_.shift_offset();
    const bool treated = d_.treated(i);
    v.setZero();
    for (std::size_t j = 0; j < p; ++j) v[static_cast<Eigen::Index>(j)] = a[j];
    if (treated && layout_.mode == TreatmentMode::ThetaTr)
      for (std::size_t j = 0; j < p; ++j) v[static_cast<Eigen::Index>(p + j)] = a[j];
    if (eta_weight == 0.0) return;
    if (treated && layout_.mode == TreatmentMode::Beta) v[static_cast<Eigen::Index>(p)] = 1.0;
    const double* row = layout_.q > 0 ? shift_->data() + i * layout_.q : nullptr;
    for (std::size_t j = 0; j < layout_.q; ++j) v[static_cast<Eigen::Index>(so + j)] = row[j];
  }

  double accumulate(const Eigen::VectorXd& x, Eigen::VectorXd* g, Eigen::MatrixXd* H) const {
    const auto n = static_cast<Eigen::Index>(layout_.size());
    if (g != nullptr) g->setZero(n);
    if (H != nullptr) H->setZero(n, n);
    Eigen::VectorXd vl(n), vu(n), vs(n);
    double total = 0.0;
    for (std::size_t k = 0; k < idx_.size(); ++k) {
      const std::size_t i = idx_[k];
      const double wi = w_[k];
      const SurvResponse::Kind kind = d_.kind(i);
      const bool use_lower = kind != SurvResponse::Kind::Left;
      const bool use_upper =
          kind == SurvResponse::Kind::Left || kind == SurvResponse::Kind::Interval;
      const bool exact = kind == SurvResponse::Kind::Exact;

      double zl = -kInf, zu = kInf, slope = 0.0;
      if (use_lower) {
        direction(i, d_.a_lower(i), 1.0, vl);
        zl = vl.dot(x);
      }
      if (use_upper) {
        direction(i, d_.a_upper(i), 1.0, vu);
        zu = vu.dot(x);
      }
      if (exact) {
        direction(i, d_.a_slope(i), 0.0, vs);
        slope = vs.dot(x);
        zu = zl;
      }
      const Contribution c = contribution(kind, zl, zu, slope);
      if (!c.feasible || !std::isfinite(c.loglik)) return -kInf;
      total += wi * c.loglik;
      if (g == nullptr) continue;

      if (use_lower) g->noalias() += (wi * c.d_lower) * vl;
      if (use_upper) g->noalias() += (wi * c.d_upper) * vu;
      if (exact) g->noalias() += (wi * c.d_slope) * vs;
      if (H == nullptr) continue;
      if (use_lower) H->selfadjointView<Eigen::Lower>().rankUpdate(vl, wi * c.d2_lower);
      if (use_upper) H->selfadjointView<Eigen::Lower>().rankUpdate(vu, wi * c.d2_upper);
      if (use_lower && use_upper)
        H->selfadjointView<Eigen::Lower>().rankUpdate(vl, vu, wi * c.d2_lower_upper);
      if (exact) H->selfadjointView<Eigen::Lower>().rankUpdate(vs, wi * c.d2_slope);
    }
    if (H != nullptr) *H = H->selfadjointView<Eigen::Lower>();
    return total;
  }

  const LikelihoodDesign& d_;
  std::vector<std::size_t> idx_;
  std::vector<double> w_;
  Layout layout_;
  const std::vector<double>* shift_;
  double wsum_ = 0.0;
};

/// Solver coordinates: each monotone block of theta is written as cumulative
/// sums theta_k = y_1 + ... + y_k, so the ordering constraints become simple
/// bounds y_k >= eps. A theta_tr block is carried as phi = theta + theta_tr in
/// the same form. Weibull keeps its coordinates with a bound on the slope.
class Reparam {
 public:
  Reparam(const Basis& b, const Layout& layout)
      : layout_(layout), cumulative_(b.kind() == BasisKind::Bernstein) {
    const auto n = static_cast<Eigen::Index>(layout.size());
    const auto p = static_cast<Eigen::Index>(layout.p);
    lower_ = Eigen::VectorXd::Constant(n, -kInf);
    const Eigen::Index blocks = layout.mode == TreatmentMode::ThetaTr ? 2 : 1;
    for (Eigen::Index blk = 0; blk < blocks; ++blk) {
      const Eigen::Index o = blk * p;
      if (cumulative_)
        for (Eigen::Index k = 1; k < p; ++k) lower_[o + k] = kBernsteinMinIncrement;
      else
        lower_[o + 1] = kWeibullMinSlope;
    }
  }

  const Eigen::VectorXd& lower() const { return lower_; }

  Eigen::VectorXd to_model(const Eigen::VectorXd& y) const {
    Eigen::VectorXd x = y;
    const auto p = static_cast<Eigen::Index>(layout_.p);
    if (cumulative_) {
      cumsum(x, 0);
      if (two_blocks()) cumsum(x, p);
    }
    if (two_blocks()) x.segment(p, p) -= x.head(p);
    return x;
  }

  Eigen::VectorXd to_solver(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = x;
    const auto p = static_cast<Eigen::Index>(layout_.p);
    if (two_blocks()) y.segment(p, p) += y.head(p);
    if (cumulative_) {
      diff(y, 0);
      if (two_blocks()) diff(y, p);
    }
    return y.cwiseMax(lower_);
  }

  /// d x / d y as a dense matrix.
  Eigen::MatrixXd jacobian() const {
    const auto n = static_cast<Eigen::Index>(layout_.size());
    Eigen::MatrixXd T(n, n);
    for (Eigen::Index j = 0; j < n; ++j) T.col(j) = to_model(Eigen::VectorXd::Unit(n, j));
    return T;
  }

  /// Chain rule for a gradient taken in model coordinates.
  Eigen::VectorXd gradient_to_solver(const Eigen::VectorXd& gx) const {
    Eigen::VectorXd g = gx;
    const auto p = static_cast<Eigen::Index>(layout_.p);
    if (two_blocks()) g.head(p) -= g.segment(p, p);
    if (cumulative_) {
      reverse_cumsum(g, 0);
      if (two_blocks()) reverse_cumsum(g, p);
    }
    return g;
  }

  /// Rows of the model constraint set whose bound is active at y.
  std::vector<std::size_t> active(const Eigen::VectorXd& y, double tol) const {
    std::vector<std::size_t> out;
    const auto p = static_cast<Eigen::Index>(layout_.p);
    const Eigen::Index blocks = two_blocks() ? 2 : 1;
    const Eigen::Index rows = cumulative_ ? p - 1 : 1;
    for (Eigen::Index blk = 0; blk < blocks; ++blk)
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index j = blk * p + (cumulative_ ? r + 1 : 1);
        if (y[j] - lower_[j] <= tol) out.push_back(static_cast<std::size_t>(blk * rows + r));
      }
    return out;
  }

 private:
  bool two_blocks() const { return layout_.mode == TreatmentMode::ThetaTr; }
  void cumsum(Eigen::VectorXd& v, Eigen::Index o) const {
    for (Eigen::Index k = 1; k < static_cast<Eigen::Index>(layout_.p); ++k) v[o + k] += v[o + k - 1];
  }
  void diff(Eigen::VectorXd& v, Eigen::Index o) const {
    for (Eigen::Index k = static_cast<Eigen::Index>(layout_.p) - 1; k >= 1; --k) v[o + k] -= v[o + k - 1];
  }
  void reverse_cumsum(Eigen::VectorXd& v, Eigen::Index o) const {
    for (Eigen::Index k = static_cast<Eigen::Index>(layout_.p) - 2; k >= 0; --k) v[o + k] += v[o + k + 1];
  }

  Layout layout_;
  bool cumulative_;
  Eigen::VectorXd lower_;
};

/// Constant-shift direction v with a(t)^T v = 1 for every t.
std::vector<double> unit_shift(const Basis& b) {
  if (b.kind() == BasisKind::Weibull) return {1.0, 0.0};
  return std::vector<double>(b.size(), 1.0);
}

bool degenerate_sample(const LikelihoodDesign& d, const std::vector<std::size_t>& idx) {
  bool any_right = false;
  bool any_left = false;
  bool any_point = false;
  double t_min = kInf;
  double t_max = -kInf;
  for (std::size_t i : idx) {
    const auto& r = d.response(i);
    switch (r.kind) {
      case SurvResponse::Kind::Right:
        any_right = true;
        break;
      case SurvResponse::Kind::Left:
        any_left = true;
        break;
      default:
        any_point = true;
        break;
    }
    for (double t : {r.lower, r.upper})
      if (t > 0.0 && std::isfinite(t)) {
        t_min = std::min(t_min, t);
        t_max = std::max(t_max, t);
      }
  }
  if (!any_point && !(any_left && any_right)) return true;
  return !(t_min < t_max);
}

Eigen::VectorXd pack(const ModelParams& p, const Layout& layout) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size()));
  for (std::size_t k = 0; k < layout.p; ++k) x[static_cast<Eigen::Index>(k)] = p.theta[k];
  if (layout.mode == TreatmentMode::Beta && p.beta)
    x[static_cast<Eigen::Index>(layout.p)] = *p.beta;
  if (layout.mode == TreatmentMode::ThetaTr && p.theta_tr)
    for (std::size_t k = 0; k < layout.p; ++k)
      x[static_cast<Eigen::Index>(layout.p + k)] = (*p.theta_tr)[k];
  return x;
}

ModelParams unpack(const Eigen::VectorXd& x, const Layout& layout) {
  ModelParams p;
  p.theta.assign(x.data(), x.data() + layout.p);
  if (layout.mode == TreatmentMode::Beta) p.beta = x[static_cast<Eigen::Index>(layout.p)];
  if (layout.mode == TreatmentMode::ThetaTr)
    p.theta_tr = std::vector<double>(x.data() + layout.p, x.data() + 2 * layout.p);
  return p;
}

struct ActiveSet {
  std::vector<std::size_t> idx;
  std::vector<double> w;
  double w_treated = 0.0;
  double w_control = 0.0;
};

ActiveSet active_set(const LikelihoodDesign& d, std::span<const double> weights, bool need_treatment) {
  if (weights.size() != d.size()) throw InvalidArgument("weights and subjects differ in length");
  ActiveSet a;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("weights must be non-negative and finite");
    if (w == 0.0) continue;
    if (need_treatment && !d.has_treatment(i))
      throw InvalidArgument("predictive fit requires a treatment indicator for every weighted subject");
    a.idx.push_back(i);
    a.w.push_back(w);
    (d.treated(i) ? a.w_treated : a.w_control) += w;
  }
  if (a.idx.empty()) throw InvalidArgument("at least one positive weight required");
  return a;
}

/// Fit on the active set with an optional linear shift design (row-major, q
/// columns). `solution`, when given, receives the raw coefficient vector.
FitResult fit_active(const LikelihoodDesign& d, const ActiveSet& a, Layout layout,
                     const FitConfig& cfg, const ModelParams* warm,
                     const std::vector<double>* shift, Eigen::VectorXd* solution = nullptr) {
  cfg.validate();
  const DesignObjective objective(d, a.idx, a.w, layout, shift);
  if (objective.weight_sum() < 2.0)
    throw InvalidArgument("effective sample size (sum of weights) must be at least 2");

  std::vector<SurvResponse> responses;
  responses.reserve(a.idx.size());
  for (std::size_t i : a.idx) responses.push_back(d.response(i));
  const Objective fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) { return objective(x, g); };

  ModelParams cold;
  cold.theta = initial_theta(d.basis(), responses, a.w);
  Eigen::VectorXd x0 = pack(cold, layout);
  Eigen::VectorXd scratch(x0.size());
  if (warm != nullptr && warm->theta.size() == layout.p) {
    Eigen::VectorXd xw = pack(*warm, layout);
    if (std::isfinite(fn(xw, scratch))) x0 = xw;
  }
  if (!std::isfinite(fn(x0, scratch))) {
    ModelParams grid;
    grid.theta.resize(layout.p);
    for (std::size_t k = 0; k < layout.p; ++k)
      grid.theta[k] = layout.p == 1 ? 0.0 : -2.0 + 4.0 * static_cast<double>(k) / static_cast<double>(layout.p - 1);
    x0 = pack(grid, layout);
  }

  FitResult res;
  if (degenerate_sample(d, a.idx)) {
    res.params = unpack(x0, layout);
    res.loglik = objective.loglik(x0);
    res.degenerate = true;
    if (solution != nullptr) *solution = x0;
    return res;
  }

  const Reparam rp(d.basis(), layout);
  const Eigen::MatrixXd T = rp.jacobian();
  Eigen::MatrixXd hx;
  Eigen::VectorXd scratch_y(x0.size());
  const HessianObjective in_solver = [&](const Eigen::VectorXd& y, Eigen::VectorXd& g,
                                         Eigen::MatrixXd* H) {
    const double v = objective(T * y, scratch, H != nullptr ? &hx : nullptr);
    g = T.transpose() * scratch;
    if (H != nullptr && std::isfinite(v)) *H = T.transpose() * hx * T;
    return v;
  };
  NewtonResult nr;
  if (cfg.solver == Solver::ProjectedNewton) {
    nr = projected_newton(in_solver, rp.to_solver(x0), rp.lower(), cfg);
  } else {
    nr.y = rp.to_solver(x0);
    nr.value = in_solver(nr.y, scratch_y, nullptr);
  }
  Eigen::VectorXd y = nr.y;
  bool converged = nr.converged && std::isfinite(nr.value);
  int iterations = nr.iterations;
  std::vector<double> history = std::move(nr.history);
  if (!converged) {
    const Objective first_order = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
      return in_solver(z, g, nullptr);
    };
    LinearInequalities cons;
    cons.lower = rp.lower();
    const Eigen::VectorXd start = std::isfinite(nr.value) ? nr.y : rp.to_solver(x0);
    const SolverResult sr = minimize_auglag(first_order, cons, start, cfg);
    if (sr.feasible && !(sr.value > nr.value)) {
      y = sr.x;
      converged = sr.converged;
      iterations += sr.outer_iterations;
      history.insert(history.end(), sr.history.begin(), sr.history.end());
    }
  }
  const Eigen::VectorXd x = T * y;
  res.params = unpack(x, layout);
  res.loglik = objective.loglik(x);
  if (solution != nullptr) *solution = x;
  res.converged = converged && std::isfinite(res.loglik);
  res.outer_iterations = iterations;
  for (double v : history) res.history.push_back(-v * objective.weight_sum());
  res.active_constraints = rp.active(y, cfg.constraint_tol);
  return res;
}

}  // namespace

Contribution LikelihoodDesign::contribution(std::size_t i, const ModelParams& p) const {
  if (p.theta.size() != p_)
    throw InvalidArgument("theta has length " + std::to_string(p.theta.size()) + ", design expects " +
                          std::to_string(p_));
  if (p.predictive() && !has_treatment(i))
    throw InvalidArgument("treatment indicator required for a model with treatment terms");
  const bool tr = treated(i);
  const std::vector<double> th = p.arm_theta(tr);
  const double shift = p.arm_shift(tr);
  double zl = -kInf, zu = kInf, slope = 0.0;
  switch (kinds_[i]) {
    case SurvResponse::Kind::Exact:
      zl = dotp(a_lower(i), th.data(), p_) + shift;
      zu = zl;
      slope = dotp(a_slope(i), th.data(), p_);
      break;
    case SurvResponse::Kind::Right:
      zl = dotp(a_lower(i), th.data(), p_) + shift;
      break;
    case SurvResponse::Kind::Left:
      zu = dotp(a_upper(i), th.data(), p_) + shift;
      break;
    case SurvResponse::Kind::Interval:
      zl = dotp(a_lower(i), th.data(), p_) + shift;
      zu = dotp(a_upper(i), th.data(), p_) + shift;
      break;
  }
  return traforest::contribution(kinds_[i], zl, zu, slope);
}

FitResult fit_design(const LikelihoodDesign& design, std::span<const double> weights,
                     TreatmentMode mode, const FitConfig& cfg, const ModelParams* warm_start) {
  const bool predictive = mode != TreatmentMode::None;
  const ActiveSet a = active_set(design, weights, predictive);
  Layout layout;
  layout.p = design.n_coef();
  layout.mode = mode;
  if (predictive && (a.w_treated <= 0.0 || a.w_control <= 0.0)) {
    layout.mode = TreatmentMode::None;
    FitResult res = fit_active(design, a, layout, cfg, warm_start, nullptr);
    if (mode == TreatmentMode::Beta) res.params.beta = 0.0;
    if (mode == TreatmentMode::ThetaTr) res.params.theta_tr = std::vector<double>(layout.p, 0.0);
    res.fallback = true;
    return res;
  }
  return fit_active(design, a, layout, cfg, warm_start, nullptr);
}

FitResult fit_unconditional(const Basis& b, std::span<const Subject> subjects, const FitConfig& cfg) {
  if (subjects.size() < 2) throw InvalidArgument("unconditional fit needs at least two subjects");
  const std::vector<double> w(subjects.size(), 1.0);
  return fit_weighted(b, subjects, w, cfg);
}

FitResult fit_weighted(const Basis& b, std::span<const Subject> subjects,
                       std::span<const double> weights, const FitConfig& cfg,
                       const std::optional<std::vector<double>>& warm_start) {
  const LikelihoodDesign design(b, subjects);
  ModelParams warm;
  if (warm_start) warm.theta = *warm_start;
  return fit_design(design, weights, TreatmentMode::None, cfg, warm_start ? &warm : nullptr);
}

FitResult fit_weighted_predictive(const Basis& b, std::span<const Subject> subjects,
                                  std::span<const double> weights, TreatmentMode mode,
                                  const FitConfig& cfg, const std::optional<ModelParams>& warm_start) {
  if (mode == TreatmentMode::None) throw InvalidArgument("predictive fit needs mode beta or theta_tr");
  const LikelihoodDesign design(b, subjects);
  return fit_design(design, weights, mode, cfg, warm_start ? &*warm_start : nullptr);
}

ShiftFitResult fit_shift_model(const Basis& b, std::span<const Subject> subjects,
                               bool with_treatment_interactions, const FitConfig& cfg) {
  if (subjects.size() < 2) throw InvalidArgument("shift model needs at least two subjects");
  const std::size_t n = subjects.size();
  const std::size_t J = subjects.front().covariates.size();
  for (const auto& s : subjects) {
    if (s.covariates.size() != J) throw InvalidArgument("covariate rows differ in length");
    if (with_treatment_interactions && !s.treatment)
      throw InvalidArgument("treatment interactions need a treatment indicator");
  }

  // Candidate columns: standardized covariates, then r and r * covariates.
  std::vector<double> mean(J, 0.0), sd(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    for (const auto& s : subjects) mean[j] += s.covariates[j];
    mean[j] /= static_cast<double>(n);
    for (const auto& s : subjects) sd[j] += (s.covariates[j] - mean[j]) * (s.covariates[j] - mean[j]);
    sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
  }
  const std::size_t n_cand = with_treatment_interactions ? 2 * J + 1 : J;
  Eigen::MatrixXd cand(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n_cand));
  for (std::size_t i = 0; i < n; ++i) {
    const double r = subjects[i].treated() ? 1.0 : 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const double z = sd[j] > 0.0 ? (subjects[i].covariates[j] - mean[j]) / sd[j] : 0.0;
      cand(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z;
      if (with_treatment_interactions)
        cand(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(J + 1 + j)) = z * r;
    }
    if (with_treatment_interactions) cand(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(J)) = r;
  }

  // Greedy rank screening against an intercept column.
  ShiftFitResult out;
  std::vector<std::size_t> kept;
  Eigen::MatrixXd basis_cols = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 1);
  for (std::size_t c = 0; c < n_cand; ++c) {
    Eigen::MatrixXd trial(basis_cols.rows(), basis_cols.cols() + 1);
    trial << basis_cols, cand.col(static_cast<Eigen::Index>(c));
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
    qr.setThreshold(1e-9);
    if (qr.rank() == trial.cols()) {
      basis_cols = std::move(trial);
      kept.push_back(c);
    } else {
      out.dropped_columns.push_back(c);
    }
  }

  const std::size_t q = kept.size();
  std::vector<double> shift(n * q);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < q; ++k)
      shift[i * q + k] = cand(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(kept[k]));

  const LikelihoodDesign design(b, subjects);
  const std::vector<double> w(n, 1.0);
  const ActiveSet a = active_set(design, w, false);
  Layout layout;
  layout.p = design.n_coef();
  layout.q = q;
  Eigen::VectorXd x;
  FitResult fit = fit_active(design, a, layout, cfg, nullptr, &shift, &x);

  // Back to the original covariate scale; centering moves into the baseline
  // (all subjects) or into beta (treated only).
  out.alpha.assign(J, 0.0);
  out.interactions.assign(with_treatment_interactions ? J : 0, 0.0);
  double baseline_shift = 0.0;
  double beta = 0.0;
  for (std::size_t k = 0; k < q; ++k) {
    const std::size_t c = kept[k];
    const double g = x[static_cast<Eigen::Index>(layout.shift_offset() + k)];
    if (c < J) {
      out.alpha[c] = g / sd[c];
      baseline_shift -= g * mean[c] / sd[c];
    } else if (c == J) {
      beta += g;
    } else {
      const std::size_t j = c - J - 1;
      out.interactions[j] = g / sd[j];
      beta -= g * mean[j] / sd[j];
    }
  }
  const std::vector<double> v = unit_shift(b);
  for (std::size_t k = 0; k < fit.params.theta.size(); ++k) fit.params.theta[k] += baseline_shift * v[k];
  if (with_treatment_interactions) fit.params.beta = beta;
  out.fit = std::move(fit);
  return out;
}

std::vector<double> isotonic(std::span<const double> y) {
  std::vector<double> value;
  std::vector<double> weight;
  std::vector<std::size_t> count;
  for (double v : y) {
    value.push_back(v);
    weight.push_back(1.0);
    count.push_back(1);
    while (value.size() > 1 && value[value.size() - 2] > value.back()) {
      const std::size_t k = value.size() - 2;
      const double w = weight[k] + weight[k + 1];
      value[k] = (value[k] * weight[k] + value[k + 1] * weight[k + 1]) / w;
      weight[k] = w;
      count[k] += count[k + 1];
      value.pop_back();
      weight.pop_back();
      count.pop_back();
    }
  }
  std::vector<double> out;
  out.reserve(y.size());
  for (std::size_t k = 0; k < value.size(); ++k) out.insert(out.end(), count[k], value[k]);
  return out;
}

std::vector<double> initial_theta(const Basis& b, std::span<const SurvResponse> responses,
                                  std::span<const double> weights) {
  const std::size_t p = b.size();
  std::vector<double> grid(p);
  for (std::size_t k = 0; k < p; ++k)
    grid[k] = p == 1 ? 0.0 : -2.0 + 4.0 * static_cast<double>(k) / static_cast<double>(p - 1);

  struct Entry {
    double t;
    double w;
    bool event;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& r = responses[i];
    const double w = weights[i];
    if (w <= 0.0) continue;
    switch (r.kind) {
      case SurvResponse::Kind::Exact:
        entries.push_back({r.lower, w, true});
        break;
      case SurvResponse::Kind::Right:
        entries.push_back({r.lower, w, false});
        break;
      case SurvResponse::Kind::Left:
        entries.push_back({r.upper, w, true});
        break;
      case SurvResponse::Kind::Interval:
        entries.push_back({std::sqrt(r.lower * r.upper), w, true});
        break;
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& c) {
    return a.t < c.t || (a.t == c.t && a.event && !c.event);
  });
  double at_risk = 0.0;
  for (const auto& e : entries) at_risk += e.w;

  std::vector<double> times, y;
  double surv = 1.0;
  for (std::size_t i = 0; i < entries.size();) {
    const double t = entries[i].t;
    double deaths = 0.0, leaving = 0.0;
    std::size_t j = i;
    for (; j < entries.size() && entries[j].t == t; ++j) {
      if (entries[j].event) deaths += entries[j].w;
      leaving += entries[j].w;
    }
    if (deaths > 0.0) {
      surv *= 1.0 - deaths / at_risk;
      if (surv > 0.0 && surv < 1.0) {
        times.push_back(t);
        y.push_back(std::log(-std::log(surv)));
      }
    }
    at_risk -= leaving;
    i = j;
  }
  if (times.size() < 2) return grid;

  Eigen::MatrixXd A(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(p));
  std::vector<double> a(p);
  for (std::size_t i = 0; i < times.size(); ++i) {
    b.eval(times[i], a);
    for (std::size_t k = 0; k < p; ++k) A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = a[k];
  }
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::VectorXd sol = A.completeOrthogonalDecomposition().solve(yv);
  std::vector<double> theta(sol.data(), sol.data() + p);
  if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); })) return grid;

  if (b.kind() == BasisKind::Weibull) {
    if (theta[1] < 0.05) {
      theta[1] = 1.0;
      double s = 0.0;
      for (std::size_t i = 0; i < times.size(); ++i) s += y[i] - std::log(times[i]);
      theta[0] = s / static_cast<double>(times.size());
    }
    return theta;
  }
  theta = isotonic(theta);
  const double step = 1e-3;
  for (std::size_t k = 1; k < p; ++k) theta[k] = std::max(theta[k], theta[k - 1] + step);
  return theta;
}

}  // namespace traforest
