#include "traforest/basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace traforest {

bool ConstraintSet::satisfied(std::span<const double> theta, double tol) const {
  const Eigen::Map<const Eigen::VectorXd> th(theta.data(), static_cast<Eigen::Index>(theta.size()));
  if (th.size() != D.cols()) return false;
  return ((D * th - lower).array() >= -tol).all();
}

NelsonAalen NelsonAalen::fit(std::span<const SurvResponse> responses) {
  std::vector<double> w(responses.size(), 1.0);
  return fit(responses, w);
}

NelsonAalen NelsonAalen::fit(std::span<const SurvResponse> responses,
                             std::span<const double> weights) {
  // (time, weight, event) sorted by time; events before censorings at ties.
  struct Entry {
    double t;
    double w;
    bool event;
  };
  std::vector<Entry> entries;
  entries.reserve(responses.size());
  double at_risk = 0.0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto& r = responses[i];
    if (weights[i] <= 0.0) continue;
    if (r.kind == SurvResponse::Kind::Exact || r.kind == SurvResponse::Kind::Right) {
      entries.push_back({r.lower, weights[i], r.kind == SurvResponse::Kind::Exact});
      at_risk += weights[i];
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.t < b.t || (a.t == b.t && a.event && !b.event);
  });

  NelsonAalen na;
  double cum = 0.0;
  std::size_t i = 0;
  while (i < entries.size()) {
    const double t = entries[i].t;
    double deaths = 0.0;
    double leaving = 0.0;
    std::size_t j = i;
    for (; j < entries.size() && entries[j].t == t; ++j) {
      if (entries[j].event) deaths += entries[j].w;
      leaving += entries[j].w;
    }
    if (deaths > 0.0) {
      cum += deaths / at_risk;
      na.times_.push_back(t);
      na.cumhaz_.push_back(cum);
    }
    at_risk -= leaving;
    i = j;
  }
  return na;
}

double NelsonAalen::operator()(double t) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return 0.0;
  return cumhaz_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

void bernstein_values(int n, double u, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  out[0] = 1.0;
  const double v = 1.0 - u;
  for (int k = 1; k <= n; ++k) {
    for (int j = k; j >= 1; --j) out[j] = v * out[j] + u * out[j - 1];
    out[0] *= v;
  }
}

void bernstein_derivs(int n, double u, std::span<double> out) {
  if (n == 0) {
    out[0] = 0.0;
    return;
  }
  std::vector<double> lower(static_cast<std::size_t>(n));
  bernstein_values(n - 1, u, lower);
  for (int k = 0; k <= n; ++k) {
    const double left = k > 0 ? lower[k - 1] : 0.0;
    const double right = k < n ? lower[k] : 0.0;
    out[k] = n * (left - right);
  }
}

Basis Basis::weibull() {
  Basis b;
  b.kind_ = BasisKind::Weibull;
  b.order_ = 1;
  return b;
}

Basis Basis::bernstein(int order, double lo, double hi) {
  if (order < 1) throw InvalidArgument("Bernstein order must be >= 1");
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi))
    throw InvalidArgument("Bernstein support requires finite lo < hi");
  Basis b;
  b.kind_ = BasisKind::Bernstein;
  b.order_ = order;
  b.lo_ = lo;
  b.hi_ = hi;
  return b;
}

Basis Basis::nonparametric() {
  Basis b;
  b.kind_ = BasisKind::Nonparametric;
  b.order_ = 0;
  return b;
}

Basis Basis::nonparametric(NelsonAalen baseline) {
  Basis b = nonparametric();
  b.baseline_ = std::make_shared<const NelsonAalen>(std::move(baseline));
  return b;
}

std::size_t Basis::size() const {
  switch (kind_) {
    case BasisKind::Weibull:
      return 2;
    case BasisKind::Bernstein:
      return static_cast<std::size_t>(order_) + 1;
    case BasisKind::Nonparametric:
      return 0;
  }
  return 0;
}

void Basis::check_time(double t) const {
  if (kind_ == BasisKind::Nonparametric)
    throw UnsupportedOperation("nonparametric basis has no parametric a(t)");
  if (!(t > 0.0) || !std::isfinite(t))
    throw InvalidArgument("basis evaluated at non-positive or non-finite time " +
                          std::to_string(t));
}

void Basis::eval(double t, std::span<double> out) const {
  check_time(t);
  const double lt = std::log(t);
  if (kind_ == BasisKind::Weibull) {
    out[0] = 1.0;
    out[1] = lt;
    return;
  }
  const double u = (lt - lo_) / (hi_ - lo_);
  if (u >= 0.0 && u <= 1.0) {
    bernstein_values(order_, u, out);
    return;
  }
  // Linear continuation in log t from the nearest boundary.
  const double edge = u < 0.0 ? 0.0 : 1.0;
  const std::size_t p = size();
  std::vector<double> slope(p);
  bernstein_values(order_, edge, out);
  bernstein_derivs(order_, edge, slope);
  for (std::size_t k = 0; k < p; ++k) out[k] += (u - edge) * slope[k];
}

void Basis::deriv(double t, std::span<double> out) const {
  check_time(t);
  if (kind_ == BasisKind::Weibull) {
    out[0] = 0.0;
    out[1] = 1.0 / t;
    return;
  }
  const double u = std::clamp((std::log(t) - lo_) / (hi_ - lo_), 0.0, 1.0);
  bernstein_derivs(order_, u, out);
  const double scale = 1.0 / ((hi_ - lo_) * t);
  for (auto& v : out) v *= scale;
}

std::vector<double> Basis::eval(double t) const {
  std::vector<double> out(size());
  eval(t, out);
  return out;
}

std::vector<double> Basis::deriv(double t) const {
  std::vector<double> out(size());
  deriv(t, out);
  return out;
}

ConstraintSet Basis::constraints() const {
  ConstraintSet cs;
  const auto p = static_cast<Eigen::Index>(size());
  switch (kind_) {
    case BasisKind::Weibull:
      cs.D = Eigen::MatrixXd::Zero(1, 2);
      cs.D(0, 1) = 1.0;
      cs.lower = Eigen::VectorXd::Constant(1, kWeibullMinSlope);
      break;
    case BasisKind::Bernstein:
      cs.D = Eigen::MatrixXd::Zero(p - 1, p);
      for (Eigen::Index k = 0; k + 1 < p; ++k) {
        cs.D(k, k) = -1.0;
        cs.D(k, k + 1) = 1.0;
      }
      cs.lower = Eigen::VectorXd::Constant(p - 1, kBernsteinMinIncrement);
      break;
    case BasisKind::Nonparametric:
      throw UnsupportedOperation("nonparametric basis has no parameter constraints");
  }
  return cs;
}

std::pair<double, double> default_support(std::span<const double> log_times) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : log_times) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo < hi)) throw InvalidArgument("support needs at least two distinct finite log-times");
  return {lo, hi};
}

}  // namespace traforest
