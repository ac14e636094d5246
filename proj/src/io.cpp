#include "traforest/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

namespace traforest {

namespace {

using json = nlohmann::json;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<double> to_number(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  if (t == "inf" || t == "Inf" || t == "+inf" || t == "Inf") return kInf;
  double v = 0.0;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::string where(std::size_t row, const std::string& col) {
  return "row " + std::to_string(row + 1) + ", column '" + col + "'";
}

std::vector<std::string> split_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cur += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw SchemaError("line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(cur);
  return out;
}

json params_to_json(const ModelParams& p) {
  json j;
  j["theta"] = p.theta;
  j["beta"] = p.beta ? json(*p.beta) : json(nullptr);
  j["theta_tr"] = p.theta_tr ? json(*p.theta_tr) : json(nullptr);
  return j;
}

ModelParams params_from_json(const json& j) {
  ModelParams p;
  p.theta = j.at("theta").get<std::vector<double>>();
  if (!j.at("beta").is_null()) p.beta = j.at("beta").get<double>();
  if (!j.at("theta_tr").is_null()) p.theta_tr = j.at("theta_tr").get<std::vector<double>>();
  return p;
}

const char* kind_name(SurvResponse::Kind k) {
  switch (k) {
    case SurvResponse::Kind::Exact:
      return "exact";
    case SurvResponse::Kind::Right:
      return "right";
    case SurvResponse::Kind::Left:
      return "left";
    case SurvResponse::Kind::Interval:
      return "interval";
  }
  return "";
}

const char* mode_name(TreatmentMode m) {
  switch (m) {
    case TreatmentMode::None:
      return "none";
    case TreatmentMode::Beta:
      return "beta";
    case TreatmentMode::ThetaTr:
      return "theta_tr";
  }
  return "";
}

TreatmentMode mode_from(const std::string& s) {
  if (s == "none") return TreatmentMode::None;
  if (s == "beta") return TreatmentMode::Beta;
  if (s == "theta_tr") return TreatmentMode::ThetaTr;
  throw SchemaError("model file: unknown aggregation mode '" + s + "'");
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_line(line, line_no);
    for (auto& f : fields) f = trim(f);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      std::set<std::string> seen;
      for (const auto& h : t.header) {
        if (h.empty()) throw SchemaError("header has an empty column name");
        if (!seen.insert(h).second) throw SchemaError("duplicate column '" + h + "' in header");
      }
      continue;
    }
    if (fields.size() != t.header.size())
      throw SchemaError("row " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(fields.size()) +
                        " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (!have_header) throw SchemaError("missing header line");
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  return read_csv(in);
}

void write_csv(std::ostream& out, const CsvTable& table) {
  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t k = 0; k < fields.size(); ++k) {
      if (k) out << ',';
      const std::string& f = fields[k];
      if (f.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char c : f) out << (c == '"' ? std::string("\"\"") : std::string(1, c));
        out << '"';
      } else {
        out << f;
      }
    }
    out << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
}

SurvData parse_surv_table(const CsvTable& table) {
  const int lc = table.column("lower");
  const int uc = table.column("upper");
  if (lc < 0 || uc < 0) throw SchemaError("required columns 'lower' and 'upper' missing from header");
  const int tc = table.column("treatment");
  SurvData d;
  std::vector<int> cov_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const int ci = static_cast<int>(c);
    if (ci == lc || ci == uc || ci == tc) continue;
    cov_cols.push_back(ci);
    d.covariate_names.push_back(table.header[c]);
  }
  d.subjects.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string ls = trim(row[static_cast<std::size_t>(lc)]);
    const std::string us = trim(row[static_cast<std::size_t>(uc)]);
    double lower = 0.0;
    double upper = kInf;
    if (!ls.empty()) {
      const auto v = to_number(ls);
      if (!v || std::isnan(*v) || *v < 0.0 || std::isinf(*v))
        throw SchemaError(where(r, "lower") + ": expected a non-negative finite number, got '" + ls + "'");
      lower = *v;
    }
    if (!us.empty()) {
      const auto v = to_number(us);
      if (!v || std::isnan(*v) || *v <= 0.0)
        throw SchemaError(where(r, "upper") + ": expected a positive number or 'inf', got '" + us + "'");
      upper = *v;
    }
    Subject s;
    try {
      if (lower == 0.0 && std::isinf(upper))
        throw SchemaError("both bounds are unbounded");
      if (lower == 0.0)
        s.response = SurvResponse::left(upper);
      else if (std::isinf(upper))
        s.response = SurvResponse::right(lower);
      else if (lower == upper)
        s.response = SurvResponse::exact(lower);
      else if (lower < upper)
        s.response = SurvResponse::interval(lower, upper);
      else
        throw SchemaError("lower exceeds upper");
    } catch (const InvalidArgument& e) {
      throw SchemaError(where(r, "lower") + "/'upper': invalid response (" + e.what() + ")");
    }
    if (tc >= 0) {
      const std::string ts = trim(row[static_cast<std::size_t>(tc)]);
      if (ts == "0" || ts == "1")
        s.treatment = ts == "1" ? 1 : 0;
      else
        throw SchemaError(where(r, "treatment") + ": expected 0 or 1, got '" + ts + "'");
    }
    s.covariates.reserve(cov_cols.size());
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      const std::string& cell = row[static_cast<std::size_t>(cov_cols[k])];
      const auto v = to_number(cell);
      if (!v || !std::isfinite(*v))
        throw SchemaError(where(r, d.covariate_names[k]) + ": expected a finite number, got '" + cell + "'");
      s.covariates.push_back(*v);
    }
    d.subjects.push_back(std::move(s));
  }
  return d;
}

SurvData read_surv_csv(const std::string& path) { return parse_surv_table(read_csv_file(path)); }

CsvTable surv_table(const SurvData& data) {
  CsvTable t;
  t.header = {"lower", "upper"};
  const bool treat = data.predictive();
  if (treat) t.header.push_back("treatment");
  t.header.insert(t.header.end(), data.covariate_names.begin(), data.covariate_names.end());
  for (const auto& s : data.subjects) {
    std::vector<std::string> row;
    const auto& r = s.response;
    row.push_back(r.kind == SurvResponse::Kind::Left ? "0" : format_number(r.lower));
    row.push_back(r.kind == SurvResponse::Kind::Right ? "inf"
                  : r.kind == SurvResponse::Kind::Exact ? format_number(r.lower)
                                                        : format_number(r.upper));
    if (treat) row.push_back(s.treatment ? std::to_string(*s.treatment) : "");
    for (double v : s.covariates) row.push_back(format_number(v));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable ingest(const CsvTable& raw, const IngestOptions& opt) {
  const bool by_event = !opt.time_column.empty() || !opt.event_column.empty();
  const bool by_bounds = !opt.lower_column.empty() || !opt.upper_column.empty();
  if (by_event == by_bounds)
    throw InvalidArgument("give either --time and --event, or --lower and --upper");
  auto need = [&](const std::string& name) {
    const int c = raw.column(name);
    if (c < 0) throw SchemaError("column '" + name + "' not found in header");
    return c;
  };
  std::set<int> used;
  int c_time = -1, c_event = -1, c_lower = -1, c_upper = -1, c_treat = -1;
  if (by_event) {
    if (opt.time_column.empty() || opt.event_column.empty())
      throw InvalidArgument("--time and --event must be given together");
    c_time = need(opt.time_column);
    c_event = need(opt.event_column);
    used.insert({c_time, c_event});
  } else {
    if (opt.lower_column.empty() || opt.upper_column.empty())
      throw InvalidArgument("--lower and --upper must be given together");
    c_lower = need(opt.lower_column);
    c_upper = need(opt.upper_column);
    used.insert({c_lower, c_upper});
  }
  if (!opt.treatment_column.empty()) {
    c_treat = need(opt.treatment_column);
    used.insert(c_treat);
  }
  for (const auto& d : opt.drop) used.insert(need(d));
  for (const auto& [name, levels] : opt.ordinal) {
    need(name);
    if (levels.empty()) throw InvalidArgument("ordinal column '" + name + "' needs at least one level");
  }

  CsvTable out;
  out.header = {"lower", "upper"};
  if (c_treat >= 0) out.header.push_back("treatment");

  // Per covariate column: numeric, ordinal or one-hot levels.
  struct Spec {
    int col;
    enum { Numeric, Ordinal, OneHot } kind;
    std::vector<std::string> levels;
  };
  std::vector<Spec> specs;
  for (std::size_t c = 0; c < raw.header.size(); ++c) {
    const int ci = static_cast<int>(c);
    if (used.count(ci)) continue;
    const std::string& name = raw.header[c];
    if (const auto it = opt.ordinal.find(name); it != opt.ordinal.end()) {
      specs.push_back({ci, Spec::Ordinal, it->second});
      out.header.push_back(name);
      continue;
    }
    bool numeric = true;
    std::set<std::string> levels;
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
      const std::string& v = raw.rows[r][c];
      if (v.empty() || v == "NA") throw SchemaError(where(r, name) + ": missing value");
      levels.insert(v);
      const auto num = to_number(v);
      if (!num || !std::isfinite(*num)) numeric = false;
    }
    if (numeric) {
      specs.push_back({ci, Spec::Numeric, {}});
      out.header.push_back(name);
    } else {
      specs.push_back({ci, Spec::OneHot, std::vector<std::string>(levels.begin(), levels.end())});
      for (const auto& l : levels) out.header.push_back(name + "=" + l);
    }
  }

  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    std::vector<std::string> o;
    if (by_event) {
      const std::string& t = row[static_cast<std::size_t>(c_time)];
      const auto tv = to_number(t);
      if (!tv || !(*tv > 0.0) || !std::isfinite(*tv))
        throw SchemaError(where(r, opt.time_column) + ": expected a positive time, got '" + t + "'");
      const std::string& e = row[static_cast<std::size_t>(c_event)];
      if (e != "0" && e != "1")
        throw SchemaError(where(r, opt.event_column) + ": expected 0 or 1, got '" + e + "'");
      o.push_back(t);
      o.push_back(e == "1" ? t : "inf");
    } else {
      o.push_back(row[static_cast<std::size_t>(c_lower)]);
      o.push_back(row[static_cast<std::size_t>(c_upper)]);
    }
    if (c_treat >= 0) {
      const std::string& v = row[static_cast<std::size_t>(c_treat)];
      if (opt.treated_level.empty()) {
        if (v != "0" && v != "1")
          throw SchemaError(where(r, opt.treatment_column) + ": expected 0 or 1, got '" + v +
                            "' (use --treated to name the treated level)");
        o.push_back(v);
      } else {
        o.push_back(v == opt.treated_level ? "1" : "0");
      }
    }
    for (const auto& s : specs) {
      const std::string& v = row[static_cast<std::size_t>(s.col)];
      switch (s.kind) {
        case Spec::Numeric:
          o.push_back(v);
          break;
        case Spec::Ordinal: {
          const auto it = std::find(s.levels.begin(), s.levels.end(), v);
          if (it == s.levels.end())
            throw SchemaError(where(r, raw.header[static_cast<std::size_t>(s.col)]) + ": level '" + v +
                              "' not among the ordinal levels");
          o.push_back(std::to_string(it - s.levels.begin() + 1));
          break;
        }
        case Spec::OneHot:
          for (const auto& l : s.levels) o.push_back(v == l ? "1" : "0");
          break;
      }
    }
    out.rows.push_back(std::move(o));
  }
  return out;
}

std::string forest_to_json(const Forest& f) {
  const ForestConfig& c = f.config;
  json cfg;
  cfg["n_trees"] = c.n_trees;
  cfg["subsample_fraction"] = c.subsample_fraction;
  cfg["stratify_by_treatment"] = c.stratified();
  cfg["method"] = c.spec.label();
  cfg["split_order"] = c.spec.order;
  cfg["max_depth"] = c.tree.max_depth;
  cfg["min_node"] = c.tree.min_node;
  cfg["mtry"] = c.tree.mtry;
  cfg["refit_nodes"] = c.tree.refit_nodes;
  cfg["master_seed"] = c.master_seed;
  cfg["aggregation_order"] = c.aggregation_order;
  cfg["aggregation_mode"] = mode_name(c.resolved_aggregation_mode());
  cfg["fit_leaf_models"] = c.fit_leaf_models;
  cfg["split_statistic"] = "quadratic";
  for (const auto* fc : {&c.fit, &c.tree.fit}) {
    json j;
    j["solver"] = fc->solver == Solver::ProjectedNewton ? "projected_newton" : "auglag_spg";
    j["max_outer_iters"] = fc->max_outer_iters;
    j["max_inner_iters"] = fc->max_inner_iters;
    j["grad_tol"] = fc->grad_tol;
    j["constraint_tol"] = fc->constraint_tol;
    j["penalty_growth"] = fc->penalty_growth;
    cfg[fc == &c.fit ? "aggregation_fit" : "node_fit"] = j;
  }

  json training = json::array();
  for (const auto& s : f.subjects) {
    json j;
    j["kind"] = kind_name(s.response.kind);
    j["lower"] = s.response.lower;
    j["upper"] = std::isfinite(s.response.upper) ? json(s.response.upper) : json(nullptr);
    j["treatment"] = s.treatment ? json(*s.treatment) : json(nullptr);
    j["x"] = s.covariates;
    training.push_back(std::move(j));
  }

  json trees = json::array();
  for (const auto& t : f.trees) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
      json j;
      j["depth"] = n.depth;
      if (n.is_leaf()) {
        j["members"] = n.members;
        if (n.fit_failed) j["fit_failed"] = true;
        if (n.leaf_model) j["leaf_model"] = params_to_json(*n.leaf_model);
      } else {
        j["var"] = n.var;
        j["cut"] = n.cutpoint;
        j["left"] = n.left;
        j["right"] = n.right;
      }
      nodes.push_back(std::move(j));
    }
    trees.push_back(std::move(nodes));
  }

  json doc;
  doc["format"] = "traforest-model";
  doc["version"] = kModelFormatVersion;
  doc["config"] = cfg;
  doc["covariate_names"] = f.covariate_names;
  doc["support"] = {f.aggregation_basis.lo(), f.aggregation_basis.hi()};
  doc["root_params"] = params_to_json(f.root_params);
  doc["training"] = training;
  doc["subsamples"] = f.subsamples;
  doc["trees"] = trees;
  return doc.dump();
}

Forest forest_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "traforest-model") throw SchemaError("not a traforest model file");
    const int version = doc.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw SchemaError("unsupported model format version " + std::to_string(version));
    const json& cfg = doc.at("config");
    Forest f;
    ForestConfig& c = f.config;
    c.n_trees = cfg.at("n_trees");
    c.subsample_fraction = cfg.at("subsample_fraction");
    c.stratify_by_treatment = cfg.at("stratify_by_treatment").get<bool>();
    c.spec = SplitSpec::parse(cfg.at("method").get<std::string>(), cfg.at("split_order").get<int>());
    c.tree.max_depth = cfg.at("max_depth");
    c.tree.min_node = cfg.at("min_node");
    c.tree.mtry = cfg.at("mtry");
    c.tree.refit_nodes = cfg.at("refit_nodes");
    c.tree.seed = cfg.at("master_seed");
    c.master_seed = cfg.at("master_seed");
    c.aggregation_order = cfg.at("aggregation_order");
    c.aggregation_mode = mode_from(cfg.at("aggregation_mode").get<std::string>());
    c.fit_leaf_models = cfg.at("fit_leaf_models");
    for (FitConfig* fc : {&c.fit, &c.tree.fit}) {
      const json& j = cfg.at(fc == &c.fit ? "aggregation_fit" : "node_fit");
      fc->solver = j.at("solver") == "auglag_spg" ? Solver::AugLagSpg : Solver::ProjectedNewton;
      fc->max_outer_iters = j.at("max_outer_iters");
      fc->max_inner_iters = j.at("max_inner_iters");
      fc->grad_tol = j.at("grad_tol");
      fc->constraint_tol = j.at("constraint_tol");
      fc->penalty_growth = j.at("penalty_growth");
    }
    f.covariate_names = doc.at("covariate_names").get<std::vector<std::string>>();
    for (const auto& j : doc.at("training")) {
      Subject s;
      const std::string kind = j.at("kind");
      const double lower = j.at("lower");
      if (kind == "exact")
        s.response = SurvResponse::exact(lower);
      else if (kind == "right")
        s.response = SurvResponse::right(lower);
      else if (kind == "left")
        s.response = SurvResponse::left(j.at("upper").get<double>());
      else if (kind == "interval")
        s.response = SurvResponse::interval(lower, j.at("upper").get<double>());
      else
        throw SchemaError("model file: unknown response kind '" + kind + "'");
      if (!j.at("treatment").is_null()) s.treatment = j.at("treatment").get<int>();
      s.covariates = j.at("x").get<std::vector<double>>();
      f.subjects.push_back(std::move(s));
    }
    const auto support = doc.at("support").get<std::vector<double>>();
    if (support.size() != 2) throw SchemaError("model file: support must have two entries");
    f.aggregation_basis = Basis::bernstein(c.aggregation_order, support[0], support[1]);
    f.root_params = params_from_json(doc.at("root_params"));
    f.subsamples = doc.at("subsamples").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& tj : doc.at("trees")) {
      Tree t;
      for (const auto& nj : tj) {
        TreeNode n;
        n.depth = nj.at("depth");
        if (nj.contains("var")) {
          n.var = nj.at("var");
          n.cutpoint = nj.at("cut");
          n.left = nj.at("left");
          n.right = nj.at("right");
        } else {
          n.members = nj.at("members").get<std::vector<std::size_t>>();
          n.fit_failed = nj.value("fit_failed", false);
          if (nj.contains("leaf_model")) n.leaf_model = params_from_json(nj.at("leaf_model"));
        }
        t.nodes.push_back(std::move(n));
      }
      const auto n_nodes = static_cast<int>(t.nodes.size());
      for (const auto& n : t.nodes)
        if (!n.is_leaf() && (n.left <= 0 || n.left >= n_nodes || n.right <= 0 || n.right >= n_nodes ||
                             static_cast<std::size_t>(n.var) >= f.covariate_names.size()))
          throw SchemaError("model file: malformed tree structure");
      if (t.nodes.empty()) throw SchemaError("model file: empty tree");
      f.trees.push_back(std::move(t));
    }
    if (f.trees.size() != f.subsamples.size() || f.trees.size() != static_cast<std::size_t>(c.n_trees))
      throw SchemaError("model file: tree and subsample counts disagree");
    f.finalize();
    return f;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model file is missing or mistypes a field: ") + e.what());
  }
}

void save_forest(const Forest& f, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << forest_to_json(f) << '\n';
  if (!out) throw InvalidArgument("failed writing '" + path + "'");
}

Forest load_forest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return forest_from_json(ss.str());
}

}  // namespace traforest
