#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Workspace {
 public:
  Workspace() : dir_(fs::temp_directory_path() / ("traforest_cli_" + std::to_string(::getpid()))) {
    fs::create_directories(dir_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Run run(const std::string& args) const {
    const std::string cmd = std::string("\"") + TRAFOREST_CLI + "\" " + args + " > \"" + path("stdout") + "\" 2> \"" +
                            path("stderr") + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(path("stdout"));
    r.err = slurp(path("stderr"));
    return r;
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(path(name)) << text; }

 private:
  fs::path dir_;
};

std::string gbsg2() { return std::string(TRAFOREST_DATA_DIR) + "/gbsg2.csv"; }

double value_after(const std::string& text, const std::string& key) {
  const auto at = text.find(key);
  REQUIRE(at != std::string::npos);
  return std::stod(text.substr(at + key.size()));
}

std::string head_lines(const std::string& path, int n) {
  std::ifstream in(path);
  std::string line, out;
  for (int i = 0; i < n && std::getline(in, line); ++i) out += line + "\n";
  return out;
}

}  // namespace

TEST_CASE("usage errors") {
  const Workspace ws;
  CHECK(ws.run("").code != 0);
  CHECK(ws.run("fit --data " + gbsg2() + " --trees 0 --out " + ws.path("m.json")).code != 0);
  CHECK(ws.run("bench --scenario ph --methods Bs-alpha --reps 0").code != 0);
  const Run np = ws.run("fit --data " + gbsg2() + " --method NP-theta --out " + ws.path("m.json"));
  CHECK(np.code != 0);
  CHECK(np.err.find("NP-theta") != std::string::npos);
  CHECK(ws.run("fit --data " + gbsg2() + " --mtry lots --out " + ws.path("m.json")).code != 0);
  CHECK(ws.run("fit --data " + ws.path("missing.csv") + " --out " + ws.path("m.json")).code != 0);
  CHECK_FALSE(fs::exists(ws.path("m.json")));
}

TEST_CASE("fit, predict, evaluate and importance") {
  const Workspace ws;
  ws.write("train.csv", head_lines(gbsg2(), 121));
  const std::string model = ws.path("m.json");

  SUBCASE("a single full-data stump evaluates to the in-sample log-likelihood") {
    const Run fit = ws.run("fit --data " + ws.path("train.csv") +
                           " --trees 1 --max-depth 0 --subsample 1 --no-oob --out " + model);
    REQUIRE(fit.code == 0);
    const double root = value_after(fit.out, "root loglik");
    const Run ev = ws.run("evaluate --model " + model + " --data " + ws.path("train.csv"));
    REQUIRE(ev.code == 0);
    CHECK(std::abs(std::stod(ev.out) - root) < 1e-6);
  }

  SUBCASE("round trip") {
    REQUIRE(ws.run("fit --data " + ws.path("train.csv") + " --trees 10 --seed 3 --out " + model).code == 0);
    const Run pr = ws.run("predict --model " + model + " --data " + ws.path("train.csv") + " --grid 200,800,2000 --out " +
                          ws.path("p.csv"));
    REQUIRE(pr.code == 0);
    const std::string p = slurp(ws.path("p.csv"));
    CHECK(p.rfind("row,theta1,theta2,theta3,theta4,theta5,theta6,S(200),S(800),S(2000)\n", 0) == 0);
    std::istringstream lines(p);
    std::string line;
    std::getline(lines, line);
    int rows = 0;
    while (std::getline(lines, line)) {
      ++rows;
      std::vector<double> v;
      std::istringstream f(line);
      std::string cell;
      while (std::getline(f, cell, ',')) v.push_back(std::stod(cell));
      REQUIRE(v.size() == 10);
      for (int k = 2; k < 7; ++k) CHECK(v[k] >= v[k - 1]);
      CHECK(v[7] >= v[8]);
      CHECK(v[8] >= v[9]);
      CHECK((v[9] >= 0.0 && v[7] <= 1.0));
    }
    CHECK(rows == 120);

    const Run ev = ws.run("evaluate --model " + model + " --data " + ws.path("train.csv") + " --per-subject " +
                          ws.path("e.csv"));
    REQUIRE(ev.code == 0);
    CHECK(std::isfinite(std::stod(ev.out)));

    const Run i1 = ws.run("importance --model " + model + " --nperm 2 --seed 5 --out " + ws.path("i1.csv"));
    const Run i2 = ws.run("importance --model " + model + " --nperm 2 --seed 5 --out " + ws.path("i2.csv"));
    REQUIRE(i1.code == 0);
    REQUIRE(i2.code == 0);
    CHECK(slurp(ws.path("i1.csv")) == slurp(ws.path("i2.csv")));
    CHECK(slurp(ws.path("i1.csv")).rfind("variable,importance,rank\n", 0) == 0);
  }

  SUBCASE("empty validation file") {
    REQUIRE(ws.run("fit --data " + ws.path("train.csv") + " --trees 2 --out " + model).code == 0);
    ws.write("empty.csv", head_lines(gbsg2(), 1));
    const Run ev = ws.run("evaluate --model " + model + " --data " + ws.path("empty.csv"));
    CHECK(ev.code == 0);
    CHECK(std::stod(ev.out) == 0.0);
    CHECK(ev.err.find("warning") != std::string::npos);
  }

  SUBCASE("schema mismatch") {
    REQUIRE(ws.run("fit --data " + ws.path("train.csv") + " --trees 2 --out " + model).code == 0);
    ws.write("other.csv", "lower,upper,age\n100,100,50\n");
    const Run ev = ws.run("evaluate --model " + model + " --data " + ws.path("other.csv"));
    CHECK(ev.code != 0);
    CHECK(ev.err.find("pnodes") != std::string::npos);
    ws.write("bad.csv", "lower,upper\n5,abc\n");
    const Run bad = ws.run("fit --data " + ws.path("bad.csv") + " --out " + model);
    CHECK(bad.code != 0);
    CHECK(bad.err.find("row 1") != std::string::npos);
  }
}

TEST_CASE("benchmark output is reproducible") {
  const Workspace ws;
  const std::string args = "bench --scenario non-ph --methods Bs-alpha,W-theta --reps 2 --trees 5 --n-learn 120 "
                           "--n-valid 60 --seed 9 --no-timing --out ";
  REQUIRE(ws.run(args + ws.path("a.csv")).code == 0);
  REQUIRE(ws.run(args + ws.path("b.csv")).code == 0);
  const std::string a = slurp(ws.path("a.csv"));
  CHECK(a == slurp(ws.path("b.csv")));
  CHECK(a.rfind("scenario,mode,dim,method,rep,oos_loglik,true_loglik,delta,wallclock_s\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : a) lines += c == '\n';
  CHECK(lines == 5);
}

TEST_CASE("ingest") {
  const Workspace ws;
  ws.write("raw.csv", "id,arm,grade,time,status\n1,a,low,10,1\n2,b,high,12,0\n");
  const Run r = ws.run("ingest --in " + ws.path("raw.csv") + " --out " + ws.path("t.csv") +
                       " --time time --event status --treatment arm --treated a --ordinal grade=low,high --drop id");
  REQUIRE(r.code == 0);
  CHECK(slurp(ws.path("t.csv")) == "lower,upper,treatment,grade\n10,10,1,1\n12,inf,0,2\n");
  CHECK(ws.run("ingest --in " + ws.path("raw.csv") + " --out " + ws.path("t.csv") + " --time days --event status")
            .code != 0);
}
