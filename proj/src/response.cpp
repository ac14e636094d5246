#include "traforest/response.hpp"

#include <cmath>
#include <limits>

namespace traforest {

namespace {
bool positive_finite(double t) { return std::isfinite(t) && t > 0.0; }
}  // namespace

SurvResponse SurvResponse::exact(double t) {
  if (!positive_finite(t)) throw InvalidArgument("exact time must be positive and finite");
  return {Kind::Exact, t, t};
}

SurvResponse SurvResponse::right(double lower) {
  if (!positive_finite(lower))
    throw InvalidArgument("right-censoring time must be positive and finite");
  return {Kind::Right, lower, std::numeric_limits<double>::infinity()};
}

SurvResponse SurvResponse::left(double upper) {
  if (!positive_finite(upper))
    throw InvalidArgument("left-censoring time must be positive and finite");
  return {Kind::Left, 0.0, upper};
}

SurvResponse SurvResponse::interval(double lower, double upper) {
  if (!positive_finite(lower) || !positive_finite(upper) || !(lower < upper))
    throw InvalidArgument("interval censoring requires 0 < lower < upper < inf");
  return {Kind::Interval, lower, upper};
}

bool SurvData::predictive() const {
  for (const auto& s : subjects)
    if (!s.treatment) return false;
  return !subjects.empty();
}

std::vector<double> finite_log_times(const std::vector<Subject>& subjects) {
  std::vector<double> out;
  out.reserve(2 * subjects.size());
  for (const auto& s : subjects) {
    const auto& r = s.response;
    if (r.lower > 0.0 && std::isfinite(r.lower)) out.push_back(std::log(r.lower));
    if (r.kind != SurvResponse::Kind::Exact && r.upper > 0.0 && std::isfinite(r.upper))
      out.push_back(std::log(r.upper));
  }
  return out;
}

}  // namespace traforest
