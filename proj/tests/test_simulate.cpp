#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "traforest/simulate.hpp"

using namespace traforest;

namespace {

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Scenario scenario(SimMode m, Effect e, Dim d = Dim::Low) {
  Scenario sc;
  sc.mode = m;
  sc.effect = e;
  sc.dim = d;
  return sc;
}

}  // namespace

TEST_CASE("Friedman function") {
  CHECK(friedman(std::vector<double>{0, 0.3, 0.5, 0, 0}) == doctest::Approx(0.0));
  CHECK(friedman(std::vector<double>{1, 0.5, 1, 1, 1}) == doctest::Approx(30.0));
  CHECK(friedman(std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5}) == doctest::Approx(14.5711).epsilon(1e-5));
  CHECK_THROWS_AS(friedman(std::vector<double>{1.2, 0, 0, 0, 0}), InvalidArgument);
  CHECK_THROWS_AS(friedman(std::vector<double>{0, 0, 0, 0, -0.1}), InvalidArgument);
  CHECK(friedman_star(std::vector<double>{0, 0.3, 0.5, 0, 0}) == doctest::Approx(-1.5));
  CHECK(friedman_star(std::vector<double>{1, 0.5, 1, 1, 1}) == doctest::Approx(1.5));
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const std::vector<double> x = {u(gen), u(gen), u(gen), u(gen), u(gen)};
    const double f = friedman_star(x);
    CHECK(f >= -1.5);
    CHECK(f <= 1.5);
    CHECK(f == doctest::Approx(friedman(x) / 10.0 - 1.5));
  }
}

TEST_CASE("inversion sampling") {
  CHECK(weibull_time(2.0, 0.0, 1.0) == doctest::Approx(1.0));
  CHECK(weibull_time(2.0, 0.0, std::exp(2.0)) == doctest::Approx(std::exp(1.0)));
  CHECK_THROWS_AS(weibull_time(0.0, 0.0, 1.0), InvalidArgument);
}

TEST_CASE("scenario dimensions and validation") {
  CHECK(scenario(SimMode::Prognostic, Effect::PH).n_covariates() == 15);
  CHECK(scenario(SimMode::Prognostic, Effect::PH, Dim::High).n_covariates() == 60);
  CHECK(scenario(SimMode::Predictive, Effect::PH).n_covariates() == 25);
  CHECK(scenario(SimMode::Predictive, Effect::PH, Dim::High).n_covariates() == 70);
  CHECK_THROWS_AS(scenario(SimMode::Predictive, Effect::No).validate(), InvalidArgument);
  CHECK(parse_effect("non-ph") == Effect::NonPH);
  CHECK(parse_effect("combined") == Effect::Combined);
  CHECK(parse_mode("predictive") == SimMode::Predictive);
  CHECK(parse_dim("high") == Dim::High);
  CHECK_THROWS_AS(parse_effect("quadratic"), InvalidArgument);
  CHECK_THROWS_AS(parse_mode("x"), InvalidArgument);
}

TEST_CASE("referenced covariates") {
  struct Case {
    SimMode mode;
    Effect effect;
    Dim dim;
    int used;
  };
  for (const Case c : {Case{SimMode::Prognostic, Effect::Combined, Dim::Low, 10},
                       Case{SimMode::Prognostic, Effect::Combined, Dim::High, 10},
                       Case{SimMode::Prognostic, Effect::PH, Dim::Low, 5},
                       Case{SimMode::Predictive, Effect::Combined, Dim::Low, 20}}) {
    const Scenario sc = scenario(c.mode, c.effect, c.dim);
    const int J = sc.n_covariates();
    std::vector<double> x(J, 0.3);
    int used = 0;
    for (int j = 0; j < J; ++j) {
      auto y = x;
      y[j] = 0.9;
      const auto a = true_xi_alpha(sc, x, true);
      const auto b = true_xi_alpha(sc, y, true);
      used += a != b;
    }
    CHECK(used == c.used);
  }
  const Scenario no = scenario(SimMode::Prognostic, Effect::No);
  const auto [xi, alpha] = true_xi_alpha(no, std::vector<double>(15, 0.4), false);
  CHECK(xi == 1.0);
  CHECK(alpha == 0.0);
}

TEST_CASE("no-effect draws are unit exponential") {
  const SimData d = gen_dataset(scenario(SimMode::Prognostic, Effect::No), 100000, 5);
  double mean = 0.0;
  for (const auto& s : d.subjects) mean += s.response.time();
  mean /= static_cast<double>(d.subjects.size());
  CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("transformed times are unit exponential in every scenario") {
  for (SimMode m : {SimMode::Prognostic, SimMode::Predictive})
    for (Effect e : {Effect::No, Effect::PH, Effect::NonPH, Effect::Combined}) {
      if (m == SimMode::Predictive && e == Effect::No) continue;
      const SimData d = gen_dataset(scenario(m, e), 10000, 31);
      std::vector<double> z;
      for (std::size_t i = 0; i < d.subjects.size(); ++i)
        z.push_back(std::exp(d.truth.xi[i] * std::log(d.subjects[i].response.time()) + d.truth.alpha[i]));
      CHECK(oracle::ks_statistic(z, [](double v) { return 1.0 - std::exp(-v); }) < 0.02);
    }
}

TEST_CASE("data generation") {
  const Scenario sc = scenario(SimMode::Predictive, Effect::Combined);
  const SimData a = gen_dataset(sc, 2000, 3);
  const SimData b = gen_dataset(sc, 2000, 3);
  double treated = 0.0;
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    CHECK(a.subjects[i].covariates == b.subjects[i].covariates);
    CHECK(a.subjects[i].response.time() == b.subjects[i].response.time());
    CHECK(a.subjects[i].response.is_event());
    CHECK(a.truth.xi[i] > 0.0);
    REQUIRE(a.subjects[i].treatment);
    treated += a.subjects[i].treated();
    for (double v : a.subjects[i].covariates) CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK(std::abs(treated / 2000.0 - 0.5) < 0.05);
  Scenario cens = scenario(SimMode::Prognostic, Effect::PH);
  cens.censoring_rate = 0.5;
  const SimData c = gen_dataset(cens, 2000, 3);
  const auto n_cens = std::count_if(c.subjects.begin(), c.subjects.end(),
                                    [](const Subject& s) { return !s.response.is_event(); });
  CHECK(n_cens > 100);
  const SimDraw r0 = draw_replicate(scenario(SimMode::Prognostic, Effect::PH), 0);
  const SimDraw r1 = draw_replicate(scenario(SimMode::Prognostic, Effect::PH), 1);
  CHECK(r0.learn.subjects.size() == 250);
  CHECK(r0.valid.subjects.size() == 500);
  CHECK(r0.learn.subjects[0].covariates != r1.learn.subjects[0].covariates);
  CHECK(r0.learn.subjects[0].covariates != r0.valid.subjects[0].covariates);
}

TEST_CASE("true log-likelihood") {
  auto one = [](double t, double xi, double alpha) {
    Subject s;
    s.response = SurvResponse::exact(t);
    return true_loglik(std::vector<Subject>{s}, TrueParams{{xi}, {alpha}});
  };
  CHECK(one(1.0, 1.0, 0.0) == doctest::Approx(-1.0));
  CHECK(one(2.0, 1.0, 0.0) == doctest::Approx(-2.0));
  const Basis w = Basis::weibull();
  for (double t : {0.3, 1.0, 4.0})
    for (double xi : {0.5, 1.0, 2.5})
      for (double alpha : {-1.0, 0.0, 0.7}) {
        Subject s;
        s.response = SurvResponse::exact(t);
        CHECK(one(t, xi, alpha) == doctest::Approx(loglik(w, ModelParams{{alpha, xi}, std::nullopt, std::nullopt}, s)));
        s.response = SurvResponse::right(t);
        CHECK(true_loglik(std::vector<Subject>{s}, TrueParams{{xi}, {alpha}}) ==
              doctest::Approx(loglik(w, ModelParams{{alpha, xi}, std::nullopt, std::nullopt}, s)));
      }
  CHECK_THROWS_AS(one(1.0, 0.0, 0.0), InvalidArgument);
}

TEST_CASE("benchmark with depth-zero forests reduces to the unconditional model") {
  Scenario sc = scenario(SimMode::Prognostic, Effect::PH);
  sc.n_learn = 120;
  sc.n_valid = 60;
  ForestConfig cfg;
  cfg.n_trees = 3;
  cfg.subsample_fraction = 1.0;
  cfg.tree.max_depth = 0;
  cfg.fit_leaf_models = false;
  const std::vector<SplitSpec> methods = {SplitSpec::parse("Bs-alpha"), SplitSpec::parse("W-theta"),
                                          SplitSpec::parse("NP-alpha")};
  const auto rows = run_benchmark(sc, methods, 2, cfg);
  REQUIRE(rows.size() == 6);
  for (int rep = 0; rep < 2; ++rep) {
    const SimDraw d = draw_replicate(sc, rep);
    const auto [lo, hi] = default_support(finite_log_times(d.learn.subjects));
    const FitResult u = fit_unconditional(Basis::bernstein(5, lo, hi), d.learn.subjects);
    const std::vector<double> ones(d.valid.subjects.size(), 1.0);
    const double expect = total_loglik(Basis::bernstein(5, lo, hi), u.params, d.valid.subjects, ones) -
                          true_loglik(d.valid.subjects, d.valid.truth);
    for (const auto& r : rows)
      if (r.rep == rep) CHECK(r.delta == doctest::Approx(expect).epsilon(1e-7));
  }
  std::ostringstream a, b;
  write_benchmark_csv(a, rows, false);
  write_benchmark_csv(b, run_benchmark(sc, methods, 2, cfg), false);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("scenario,mode,dim,method,rep,oos_loglik,true_loglik,delta,wallclock_s\n", 0) == 0);
  CHECK(a.str().find(",NA\n") != std::string::npos);
}

TEST_CASE("no-effect scenario: alpha and theta forests overfit alike") {
  Scenario sc = scenario(SimMode::Prognostic, Effect::No);
  sc.seed = 2;
  ForestConfig cfg;
  cfg.n_trees = 100;
  cfg.fit_leaf_models = false;
  const std::vector<SplitSpec> methods = {SplitSpec::parse("Bs-alpha"), SplitSpec::parse("Bs-theta")};
  const auto rows = run_benchmark(sc, methods, 10, cfg);
  std::vector<double> a, t;
  for (const auto& r : rows) (r.method == "Bs-alpha" ? a : t).push_back(r.delta);
  const double a_lo = quantile(a, 0.25), a_hi = quantile(a, 0.75);
  const double t_lo = quantile(t, 0.25), t_hi = quantile(t, 0.75);
  CHECK(a_lo <= t_hi);
  CHECK(t_lo <= a_hi);
}
