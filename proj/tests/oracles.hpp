#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's numerical code.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace oracle {

inline double binom(int n, int k) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

/// Bernstein basis of degree n at u from the binomial formula.
inline std::vector<double> bernstein(int n, double u) {
  std::vector<double> b(n + 1);
  for (int k = 0; k <= n; ++k) b[k] = binom(n, k) * std::pow(u, k) * std::pow(1.0 - u, n - k);
  return b;
}

/// Central-difference gradient of f at x with step h * max(1, |x_k|).
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double step = h * std::max(1.0, std::abs(x[k]));
    const double x0 = x[k];
    x[k] = x0 + step;
    const double fp = f(x);
    x[k] = x0 - step;
    const double fm = f(x);
    x[k] = x0;
    g[k] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

/// Weibull MLE for exact and right-censored times: solves the profile
/// equation for the shape k by bisection. Returns (log(rate-scale), k) in the
/// parameterization log Lambda(t) = theta1 + theta2 log t.
inline std::pair<double, double> weibull_mle(const std::vector<double>& t, const std::vector<int>& event) {
  double d = 0.0, sum_log_ev = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (event[i]) {
      d += 1.0;
      sum_log_ev += std::log(t[i]);
    }
  auto g = [&](double k) {
    long double num = 0.0L, den = 0.0L;
    for (double ti : t) {
      const long double p = std::pow(static_cast<long double>(ti), static_cast<long double>(k));
      num += p * std::log(static_cast<long double>(ti));
      den += p;
    }
    return static_cast<double>(num / den) - 1.0 / k - sum_log_ev / d;
  };
  double lo = 1e-3, hi = 50.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? hi : lo) = mid;
  }
  const double k = 0.5 * (lo + hi);
  double s = 0.0;
  for (double ti : t) s += std::pow(ti, k);
  return {std::log(d / s), k};
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = cdf(x[i]);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return d;
}

struct Split {
  int var = -1;
  double cut = 0.0;
  double stat = 0.0;
};

/// Brute-force two-sample quadratic-form statistic with an SVD pseudo-inverse
/// of the conditional covariance, scanning every midpoint cut.
inline std::optional<Split> brute_force_split(const Eigen::MatrixXd& s, const Eigen::MatrixXd& x,
                                              const std::vector<int>& vars, int min_node) {
  const auto n = static_cast<double>(s.rows());
  const Eigen::VectorXd tot = s.colwise().sum().transpose();
  const Eigen::MatrixXd V0 = s.transpose() * s - tot * tot.transpose() / n;
  std::optional<Split> best;
  for (int j : vars) {
    std::vector<double> vals(x.col(j).data(), x.col(j).data() + x.rows());
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t c = 0; c + 1 < vals.size(); ++c) {
      const double cut = 0.5 * (vals[c] + vals[c + 1]);
      Eigen::VectorXd sl = Eigen::VectorXd::Zero(s.cols());
      double nl = 0.0;
      for (Eigen::Index i = 0; i < s.rows(); ++i)
        if (x(i, j) <= cut) {
          sl += s.row(i).transpose();
          nl += 1.0;
        }
      if (nl < min_node || n - nl < min_node) continue;
      const Eigen::MatrixXd V = nl * (n - nl) / (n * (n - 1.0)) * V0;
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(V, Eigen::ComputeFullU | Eigen::ComputeFullV);
      const Eigen::VectorXd sv = svd.singularValues();
      Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
      for (Eigen::Index k = 0; k < sv.size(); ++k)
        if (sv(k) > 1e-10 * sv(0)) inv(k) = 1.0 / sv(k);
      const Eigen::MatrixXd Vp = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
      const Eigen::VectorXd d = sl - nl / n * tot;
      const double T = d.dot(Vp * d);
      if (!best || T > best->stat * (1.0 + 1e-9)) best = Split{j, cut, T};
    }
  }
  if (best && !(best->stat > 1e-12)) return std::nullopt;
  return best;
}

}  // namespace oracle
