#include "traforest/likelihood.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace traforest {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSeriesThreshold = 1e-8;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

void check_params(const Basis& b, const ModelParams& p, const Subject& s) {
  if (!b.parametric()) throw UnsupportedOperation("likelihood requires a parametric basis");
  if (p.theta.size() != b.size())
    throw InvalidArgument("theta has length " + std::to_string(p.theta.size()) +
                          ", basis expects " + std::to_string(b.size()));
  if (p.beta && p.theta_tr) throw InvalidArgument("beta and theta_tr are mutually exclusive");
  if (p.theta_tr && p.theta_tr->size() != p.theta.size())
    throw InvalidArgument("theta_tr must have the same length as theta");
  if (p.predictive() && !s.treatment)
    throw InvalidArgument("treatment indicator required for a model with treatment terms");
}

void require_treatment(const Subject& s) {
  if (!s.treatment) throw InvalidArgument("treatment indicator required for predictive scores");
}

/// Basis values at the observation's bounds, evaluated once per call.
struct Evaluated {
  std::vector<double> a_lower;
  std::vector<double> a_upper;
  std::vector<double> a_slope;
  double z_lower = 0.0;
  double z_upper = 0.0;
  double slope = 0.0;
};

Evaluated evaluate(const Basis& b, const ModelParams& p, const Subject& s) {
  check_params(b, p, s);
  const auto& r = s.response;
  const bool treated = s.treated();
  const std::vector<double> theta = p.arm_theta(treated);
  const double shift = p.arm_shift(treated);
  Evaluated e;
  switch (r.kind) {
    case SurvResponse::Kind::Exact:
      e.a_lower = b.eval(r.lower);
      e.a_slope = b.deriv(r.lower);
      e.z_lower = dot(e.a_lower, theta) + shift;
      e.slope = dot(e.a_slope, theta);
      break;
    case SurvResponse::Kind::Right:
      e.a_lower = b.eval(r.lower);
      e.z_lower = dot(e.a_lower, theta) + shift;
      e.z_upper = kInf;
      break;
    case SurvResponse::Kind::Left:
      e.a_upper = b.eval(r.upper);
      e.z_upper = dot(e.a_upper, theta) + shift;
      e.z_lower = -kInf;
      break;
    case SurvResponse::Kind::Interval:
      e.a_lower = b.eval(r.lower);
      e.a_upper = b.eval(r.upper);
      e.z_lower = dot(e.a_lower, theta) + shift;
      e.z_upper = dot(e.a_upper, theta) + shift;
      break;
  }
  return e;
}

Contribution contribution_of(const Evaluated& e, SurvResponse::Kind kind) {
  return contribution(kind, e.z_lower, e.z_upper, e.slope);
}

std::vector<double> theta_gradient(const Evaluated& e, const Contribution& c, std::size_t p) {
  if (!c.feasible) throw InfeasibleLikelihood("score evaluated at an infeasible parameter");
  std::vector<double> g(p, 0.0);
  for (std::size_t k = 0; k < p; ++k) {
    if (!e.a_lower.empty()) g[k] += c.d_lower * e.a_lower[k];
    if (!e.a_upper.empty()) g[k] += c.d_upper * e.a_upper[k];
    if (!e.a_slope.empty()) g[k] += c.d_slope * e.a_slope[k];
  }
  return g;
}

}  // namespace

std::vector<double> ModelParams::arm_theta(bool treated) const {
  std::vector<double> th = theta;
  if (treated && theta_tr)
    for (std::size_t k = 0; k < th.size(); ++k) th[k] += (*theta_tr)[k];
  return th;
}

double log1mexp_neg(double x) {
  if (x < kSeriesThreshold) return std::log(x) - 0.5 * x;
  if (x < M_LN2) return std::log(-std::expm1(-x));
  return std::log1p(-std::exp(-x));
}

Contribution contribution(SurvResponse::Kind kind, double z_lower, double z_upper, double slope) {
  Contribution c;
  switch (kind) {
    case SurvResponse::Kind::Exact: {
      if (!(slope > 0.0)) {
        c.feasible = false;
        c.loglik = -kInf;
        return c;
      }
      const double x = std::exp(z_lower);
      c.loglik = z_lower - x + std::log(slope);
      c.d_lower = 1.0 - x;
      c.d_slope = 1.0 / slope;
      c.d2_lower = -x;
      c.d2_slope = -1.0 / (slope * slope);
      return c;
    }
    case SurvResponse::Kind::Right: {
      const double x = std::exp(z_lower);
      c.loglik = -x;
      c.d_lower = -x;
      c.d2_lower = -x;
      return c;
    }
    case SurvResponse::Kind::Left: {
      const double x = std::exp(z_upper);
      c.loglik = log1mexp_neg(x);
      if (x < kSeriesThreshold) {
        c.d_upper = 1.0 - 0.5 * x;
        c.d2_upper = x * (x / 6.0 - 0.5);
      } else if (x < 1.0) {
        const double em = std::expm1(x);
        c.d_upper = x / em;
        c.d2_upper = x * (em - x * (em + 1.0)) / (em * em);
      } else {
        const double e = std::exp(-x);
        const double om = -std::expm1(-x);
        c.d_upper = x * e / om;
        c.d2_upper = x * e * (om - x) / (om * om);
      }
      return c;
    }
    case SurvResponse::Kind::Interval: {
      if (!(z_upper > z_lower)) {
        c.feasible = false;
        c.loglik = -kInf;
        return c;
      }
      const double xl = std::exp(z_lower);
      const double xu = std::exp(z_upper);
      // Cumulative hazard increment over the interval, without cancellation.
      const double delta = xl * std::expm1(z_upper - z_lower);
      c.loglik = -xl + log1mexp_neg(delta);
      const double em = std::expm1(delta);
      const double om = -std::expm1(-delta);
      c.d_lower = -xl / om;
      c.d_upper = xu / em;
      c.d2_lower = -xl / om - xl * xl / (em * om);
      c.d2_upper = xu / em - xu * xu / (em * om);
      c.d2_lower_upper = xl * xu / (em * om);
      return c;
    }
  }
  return c;
}

double loglik(const Basis& b, const ModelParams& p, const Subject& s) {
  const Evaluated e = evaluate(b, p, s);
  return contribution_of(e, s.response.kind).loglik;
}

std::vector<double> score_theta(const Basis& b, const ModelParams& p, const Subject& s) {
  const Evaluated e = evaluate(b, p, s);
  return theta_gradient(e, contribution_of(e, s.response.kind), b.size());
}

double score_alpha(const Basis& b, const ModelParams& p, const Subject& s) {
  const auto& r = s.response;
  if (!b.parametric()) {
    const NelsonAalen* na = b.baseline();
    if (na == nullptr) throw InvalidArgument("nonparametric log-rank scores need a fitted baseline");
    if (p.beta && !s.treatment) throw InvalidArgument("treatment indicator required");
    const double shift = p.beta && s.treated() ? *p.beta : 0.0;
    const double zl = r.kind == SurvResponse::Kind::Left ? -kInf : std::log((*na)(r.lower)) + shift;
    const double zu = r.kind == SurvResponse::Kind::Right ? kInf
                      : r.kind == SurvResponse::Kind::Exact
                          ? zl
                          : std::log((*na)(r.upper)) + shift;
    if (r.kind == SurvResponse::Kind::Interval && !(zu > zl)) return 0.0;
    const Contribution c = contribution(r.kind, zl, zu, 1.0);
    return c.d_lower + c.d_upper;
  }
  const Evaluated e = evaluate(b, p, s);
  const Contribution c = contribution_of(e, r.kind);
  if (!c.feasible) throw InfeasibleLikelihood("score evaluated at an infeasible parameter");
  return c.d_lower + c.d_upper;
}

std::vector<double> score_alpha_beta(const Basis& b, const ModelParams& p, const Subject& s) {
  require_treatment(s);
  const double u = score_alpha(b, p, s);
  return {u, s.treated() ? u : 0.0};
}

std::vector<double> score_theta_beta(const Basis& b, const ModelParams& p, const Subject& s) {
  require_treatment(s);
  const Evaluated e = evaluate(b, p, s);
  const Contribution c = contribution_of(e, s.response.kind);
  std::vector<double> g = theta_gradient(e, c, b.size());
  g.push_back(s.treated() ? c.d_lower + c.d_upper : 0.0);
  return g;
}

std::vector<double> score_theta_thetatr(const Basis& b, const ModelParams& p, const Subject& s) {
  require_treatment(s);
  const Evaluated e = evaluate(b, p, s);
  const std::vector<double> g = theta_gradient(e, contribution_of(e, s.response.kind), b.size());
  std::vector<double> out(2 * g.size(), 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    out[k] = g[k];
    if (s.treated()) out[g.size() + k] = g[k];
  }
  return out;
}

double total_loglik(const Basis& b, const ModelParams& p, std::span<const Subject> subjects,
                    std::span<const double> weights) {
  if (weights.size() != subjects.size())
    throw InvalidArgument("weights and subjects differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (weights[i] < 0.0 || !std::isfinite(weights[i]))
      throw InvalidArgument("weights must be non-negative and finite");
    if (weights[i] == 0.0) continue;
    total += weights[i] * loglik(b, p, subjects[i]);
  }
  return total;
}

std::vector<double> survivor(const Basis& b, const ModelParams& p, std::span<const double> t_grid,
                             bool treated) {
  const std::vector<double> theta = p.arm_theta(treated);
  const double shift = p.arm_shift(treated);
  std::vector<double> out;
  out.reserve(t_grid.size());
  std::vector<double> a(b.size());
  for (double t : t_grid) {
    if (!(t > 0.0)) throw InvalidArgument("survivor grid points must be positive");
    b.eval(t, a);
    out.push_back(std::exp(-std::exp(dot(a, theta) + shift)));
  }
  return out;
}

}  // namespace traforest
