#pragma once

#include <string>
#include <vector>

#include "flame/common.hpp"

namespace flame {

/// One exposure episode. Start times are carried through ingestion and
/// persistence but do not enter the model, which depends on durations only.
struct Episode {
  double duration = 0.0;  // minutes, strictly positive
  double start = 0.0;     // minutes from the start of observation
};

struct SubjectRecord {
  std::string id;
  int y = 0;                       // binary outcome
  std::vector<double> x;           // covariates, x[0] == 1 (intercept)
  std::vector<Episode> episodes;   // may be empty
};

struct Dataset {
  std::vector<SubjectRecord> subjects;
  std::vector<std::string> covariate_names;  // size p, first is the intercept

  int size() const { return static_cast<int>(subjects.size()); }
  int covariate_dim() const { return static_cast<int>(covariate_names.size()); }
};

/// Checks the Dataset invariants; returns a warning string (empty when clean)
/// for conditions that degrade the fit without invalidating it.
inline std::string validate_dataset(const Dataset& ds) {
  if (ds.subjects.empty()) throw data_error("dataset: no subjects");
  const auto p = static_cast<std::size_t>(ds.covariate_dim());
  if (p == 0) throw data_error("dataset: no covariates (need at least the intercept)");
  bool any0 = false, any1 = false;
  for (const auto& s : ds.subjects) {
    if (s.x.size() != p) {
      throw data_error("dataset: subject '" + s.id + "' has " +
                       std::to_string(s.x.size()) + " covariates, expected " +
                       std::to_string(p));
    }
    if (s.y != 0 && s.y != 1) {
      throw data_error("dataset: subject '" + s.id + "' has non-binary outcome");
    }
    (s.y == 0 ? any0 : any1) = true;
    for (std::size_t j = 0; j < s.episodes.size(); ++j) {
      if (!(s.episodes[j].duration > 0.0)) {
        throw data_error("dataset: subject '" + s.id + "' episode " +
                         std::to_string(j + 1) + " has nonpositive duration");
      }
    }
  }
  if (!(any0 && any1)) {
    return "all outcomes are identical; the fit is degenerate";
  }
  return {};
}

inline double total_duration(const SubjectRecord& s) {
  double t = 0.0;
  for (const auto& e : s.episodes) t += e.duration;
  return t;
}

}  // namespace flame
