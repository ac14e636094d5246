#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "traforest/forest.hpp"
#include "traforest/response.hpp"

namespace traforest {

/// Raised for malformed input files; messages cite 1-based data rows and
/// column names.
class SchemaError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header, or -1.
  int column(const std::string& name) const;
};

/// Comma-separated values with optional double-quoted fields.
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);
void write_csv(std::ostream& out, const CsvTable& table);

/// Survival data file: columns `lower` and `upper` (exact: lower = upper;
/// right-censored: upper empty or "inf"; left-censored: lower empty or "0";
/// interval: lower < upper), optional `treatment` in {0, 1}, every other
/// column a numeric covariate.
SurvData parse_surv_table(const CsvTable& table);
SurvData read_surv_csv(const std::string& path);
CsvTable surv_table(const SurvData& data);

struct IngestOptions {
  /// Follow-up time and event indicator (1 = event, 0 = right-censored) ...
  std::string time_column;
  std::string event_column;
  /// ... or explicit bounds, copied verbatim.
  std::string lower_column;
  std::string upper_column;
  std::string treatment_column;
  /// Value of the treatment column coded as 1; empty expects 0/1 already.
  std::string treated_level;
  std::vector<std::string> drop;
  /// Ordered levels of categorical columns, coded 1, 2, ...
  std::map<std::string, std::vector<std::string>> ordinal;
};

/// Converts a raw table into the survival schema. Non-numeric columns that
/// are not ordinal are expanded into 0/1 indicators named "column=level".
CsvTable ingest(const CsvTable& raw, const IngestOptions& opt);

/// Versioned JSON model document; doubles are written with 17 significant
/// digits so a reload reproduces predictions exactly.
std::string forest_to_json(const Forest& f);
Forest forest_from_json(const std::string& text);
void save_forest(const Forest& f, const std::string& path);
Forest load_forest(const std::string& path);

inline constexpr int kModelFormatVersion = 1;

}  // namespace traforest
