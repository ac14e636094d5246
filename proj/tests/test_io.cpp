#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "traforest/io.hpp"

using namespace traforest;

namespace {

CsvTable csv(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}

std::string schema_message(const std::string& text) {
  try {
    parse_surv_table(csv(text));
  } catch (const SchemaError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

std::vector<Subject> sample(std::size_t n, std::uint64_t seed, bool trt) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> e(1.0);
  std::vector<Subject> s(n);
  for (auto& x : s) {
    x.covariates = {u(gen), u(gen), std::floor(3.0 * u(gen))};
    const double t = e(gen) * std::exp(-x.covariates[0]);
    const double k = u(gen);
    if (k < 0.6)
      x.response = SurvResponse::exact(t);
    else if (k < 0.8)
      x.response = SurvResponse::right(t);
    else if (k < 0.9)
      x.response = SurvResponse::left(t);
    else
      x.response = SurvResponse::interval(t, t * 1.7);
    if (trt) x.treatment = u(gen) < 0.5 ? 1 : 0;
  }
  return s;
}

}  // namespace

TEST_CASE("CSV reading") {
  const CsvTable t = csv("a,b,c\n1,\"x,y\",\"say \"\"hi\"\"\"\n\n2,,3\r\n");
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[0][2] == "say \"hi\"");
  CHECK(t.rows[1][1] == "");
  CHECK(t.rows[1][2] == "3");
  CHECK(t.column("c") == 2);
  CHECK(t.column("z") == -1);
  std::ostringstream out;
  write_csv(out, t);
  const CsvTable back = csv(out.str());
  CHECK(back.rows == t.rows);
  CHECK_THROWS_AS(csv("a,b\n1,2,3\n"), SchemaError);
  CHECK_THROWS_AS(csv(""), SchemaError);
  CHECK_THROWS_AS(csv("a,a\n1,2\n"), SchemaError);
  CHECK_THROWS_AS(csv("a,b\n\"1,2\n"), SchemaError);
}

TEST_CASE("survival schema") {
  const SurvData d = parse_surv_table(csv(
      "lower,upper,treatment,age\n"
      "2,2,1,50\n"
      "3,,0,60\n"
      "3,inf,0,61\n"
      ",4,1,70\n"
      "0,4,1,71\n"
      "1.5,2.5,0,80\n"));
  CHECK(d.covariate_names == std::vector<std::string>{"age"});
  REQUIRE(d.size() == 6);
  CHECK(d.subjects[0].response.kind == SurvResponse::Kind::Exact);
  CHECK(d.subjects[1].response.kind == SurvResponse::Kind::Right);
  CHECK(d.subjects[2].response.kind == SurvResponse::Kind::Right);
  CHECK(d.subjects[3].response.kind == SurvResponse::Kind::Left);
  CHECK(d.subjects[4].response.kind == SurvResponse::Kind::Left);
  CHECK(d.subjects[5].response.kind == SurvResponse::Kind::Interval);
  CHECK(d.subjects[0].treated());
  CHECK(d.predictive());
  CHECK(d.subjects[5].covariates == std::vector<double>{80.0});

  const SurvData back = parse_surv_table(surv_table(d));
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.subjects[i].response.kind == d.subjects[i].response.kind);
    CHECK(back.subjects[i].response.lower == d.subjects[i].response.lower);
    CHECK(back.subjects[i].response.upper == d.subjects[i].response.upper);
  }
}

TEST_CASE("schema errors cite rows and columns") {
  auto m = schema_message("lower,upper,x\n1,1,0.5\n2,abc,1\n");
  CHECK(contains(m, "row 2"));
  CHECK(contains(m, "'upper'"));
  m = schema_message("lower,upper,x\n1,1,0.5\n2,2,1\n3,3,NaN\n");
  CHECK(contains(m, "row 3"));
  CHECK(contains(m, "'x'"));
  m = schema_message("lower,upper,treatment\n1,1,2\n");
  CHECK(contains(m, "row 1"));
  CHECK(contains(m, "'treatment'"));
  m = schema_message("lower,upper\n5,2\n");
  CHECK(contains(m, "row 1"));
  m = schema_message("lower,upper\n,\n");
  CHECK(contains(m, "row 1"));
  m = schema_message("lower,upper\n-1,2\n");
  CHECK(contains(m, "'lower'"));
  m = schema_message("time,x\n1,2\n");
  CHECK(contains(m, "'lower'"));
}

TEST_CASE("ingestion") {
  const CsvTable raw = csv(
      "id,arm,grade,site,time,status\n"
      "1,drug,II,lung,10,1\n"
      "2,placebo,I,skin,12,0\n"
      "3,drug,III,lung,7,1\n");
  IngestOptions opt;
  opt.time_column = "time";
  opt.event_column = "status";
  opt.treatment_column = "arm";
  opt.treated_level = "drug";
  opt.drop = {"id"};
  opt.ordinal["grade"] = {"I", "II", "III"};
  const CsvTable t = ingest(raw, opt);
  CHECK(t.header == std::vector<std::string>{"lower", "upper", "treatment", "grade", "site=lung", "site=skin"});
  CHECK(t.rows[0] == std::vector<std::string>{"10", "10", "1", "2", "1", "0"});
  CHECK(t.rows[1] == std::vector<std::string>{"12", "inf", "0", "1", "0", "1"});
  const SurvData d = parse_surv_table(t);
  CHECK(d.subjects[1].response.kind == SurvResponse::Kind::Right);

  IngestOptions bad = opt;
  bad.ordinal["grade"] = {"I", "II"};
  CHECK_THROWS_AS(ingest(raw, bad), SchemaError);
  IngestOptions missing = opt;
  missing.time_column = "days";
  CHECK_THROWS_AS(ingest(raw, missing), SchemaError);
  IngestOptions none;
  CHECK_THROWS_AS(ingest(raw, none), InvalidArgument);
}

TEST_CASE("model files round-trip bit for bit") {
  for (const char* method : {"Bs-theta", "W-alpha", "NP-alpha", "Bs-theta-thetatr", "Bs-alpha-beta"}) {
    CAPTURE(method);
    const SplitSpec spec = SplitSpec::parse(method);
    const auto s = sample(160, 4, spec.predictive());
    ForestConfig cfg;
    cfg.n_trees = 8;
    cfg.spec = spec;
    cfg.tree.mtry = 2;
    cfg.master_seed = 11;
    const Forest f = grow_forest(s, cfg, {"a", "b", "c"});
    const std::string path = std::string("roundtrip_") + method + ".json";
    save_forest(f, path);
    const Forest g = load_forest(path);
    std::remove(path.c_str());
    CHECK(forest_to_json(g) == forest_to_json(f));
    CHECK(g.covariate_names == f.covariate_names);
    CHECK(g.aggregation_basis.lo() == f.aggregation_basis.lo());
    CHECK(g.aggregation_basis.hi() == f.aggregation_basis.hi());
    const auto valid = sample(30, 5, spec.predictive());
    CHECK(oos_contributions(g, valid) == oos_contributions(f, valid));
    for (std::size_t q = 0; q < 5; ++q) {
      const auto pf = predict_params(f, valid[q].covariates);
      const auto pg = predict_params(g, valid[q].covariates);
      CHECK(pf.theta == pg.theta);
      CHECK(pf.theta_tr == pg.theta_tr);
      CHECK(pf.beta == pg.beta);
    }
    CHECK(permutation_importance(g, 1, 3) == permutation_importance(f, 1, 3));
  }
}

TEST_CASE("model file validation") {
  CHECK_THROWS_AS(forest_from_json("{\"format\": \"other\", \"version\": 1}"), SchemaError);
  CHECK_THROWS_AS(forest_from_json("{\"format\": \"traforest-model\", \"version\": 99}"), SchemaError);
  CHECK_THROWS(forest_from_json("not json"));
  CHECK_THROWS_AS(load_forest("does/not/exist.json"), InvalidArgument);
}
