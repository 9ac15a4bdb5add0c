#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flame/common.hpp"
#include "flame/data.hpp"
#include "flame/fit.hpp"
#include "flame/inference.hpp"
#include "flame/model.hpp"
#include "flame/sampler.hpp"

namespace flame {

using json = nlohmann::json;

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_double(const std::string& s, const std::string& where) {
  if (s.empty()) throw data_error(where + ": missing value");
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw data_error(where + ": '" + s + "' is not numeric");
  }
  if (pos != s.size()) throw data_error(where + ": '" + s + "' is not numeric");
  return v;
}

/// Shortest-exact formatting: doubles survive a CSV round trip bit for bit.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Joins the subjects and episodes CSVs into a Dataset. Subject order follows
/// the subjects file; episodes attach in file order, J_i = 0 for subjects with
/// no episode rows.
inline Dataset load_dataset(const std::string& subjects_path,
                            const std::string& episodes_path) {
  std::ifstream subj(subjects_path);
  if (!subj) throw data_error("cannot open subjects file '" + subjects_path + "'");
  std::string line;
  if (!std::getline(subj, line)) throw data_error(subjects_path + ": empty file");
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "subject_id" || header[1] != "y") {
    throw data_error(subjects_path + ": header must start with subject_id,y");
  }

  Dataset ds;
  ds.covariate_names.push_back("intercept");
  for (std::size_t j = 2; j < header.size(); ++j) ds.covariate_names.push_back(header[j]);

  std::map<std::string, int> index;
  int row = 1;
  while (std::getline(subj, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    const std::string where = subjects_path + " row " + std::to_string(row);
    if (fields.size() != header.size()) {
      throw data_error(where + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(fields.size()));
    }
    SubjectRecord s;
    s.id = fields[0];
    if (s.id.empty()) throw data_error(where + ": empty subject_id");
    if (index.count(s.id)) throw data_error(where + ": duplicate subject_id '" + s.id + "'");
    if (fields[1] == "0") {
      s.y = 0;
    } else if (fields[1] == "1") {
      s.y = 1;
    } else {
      throw data_error(where + ": outcome y must be 0 or 1, got '" + fields[1] + "'");
    }
    s.x.push_back(1.0);
    for (std::size_t j = 2; j < fields.size(); ++j) {
      s.x.push_back(detail::parse_double(fields[j], where + " column " + header[j]));
    }
    index[s.id] = ds.size();
    ds.subjects.push_back(std::move(s));
  }
  if (ds.subjects.empty()) throw data_error(subjects_path + ": no subject rows");

  std::ifstream epis(episodes_path);
  if (!epis) throw data_error("cannot open episodes file '" + episodes_path + "'");
  if (!std::getline(epis, line)) throw data_error(episodes_path + ": empty file");
  const auto eh = detail::split_csv_line(line);
  if (eh.size() != 3 || eh[0] != "subject_id" || eh[1] != "start_minute" ||
      eh[2] != "duration_minutes") {
    throw data_error(episodes_path +
                     ": header must be subject_id,start_minute,duration_minutes");
  }
  row = 1;
  while (std::getline(epis, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    const std::string where = episodes_path + " row " + std::to_string(row);
    if (fields.size() != 3) throw data_error(where + ": expected 3 fields");
    const auto it = index.find(fields[0]);
    if (it == index.end()) {
      throw data_error(where + ": subject_id '" + fields[0] +
                       "' does not appear in the subjects file");
    }
    Episode e;
    e.start = detail::parse_double(fields[1], where + " start_minute");
    e.duration = detail::parse_double(fields[2], where + " duration_minutes");
    if (!(e.duration > 0.0)) {
      throw data_error(where + ": duration_minutes must be positive");
    }
    if (e.start < 0.0) throw data_error(where + ": start_minute must be nonnegative");
    ds.subjects[it->second].episodes.push_back(e);
  }
  validate_dataset(ds);
  return ds;
}

/// Writes the two-file CSV form of a Dataset (intercept column is implicit).
inline void write_dataset(const Dataset& ds, const std::string& subjects_path,
                          const std::string& episodes_path) {
  std::ofstream subj(subjects_path);
  if (!subj) throw data_error("cannot open '" + subjects_path + "' for writing");
  subj << "subject_id,y";
  for (std::size_t j = 1; j < ds.covariate_names.size(); ++j) {
    subj << ',' << ds.covariate_names[j];
  }
  subj << '\n';
  for (const auto& s : ds.subjects) {
    subj << s.id << ',' << s.y;
    for (std::size_t j = 1; j < s.x.size(); ++j) {
      subj << ',' << detail::format_double(s.x[j]);
    }
    subj << '\n';
  }

  std::ofstream epis(episodes_path);
  if (!epis) throw data_error("cannot open '" + episodes_path + "' for writing");
  epis << "subject_id,start_minute,duration_minutes\n";
  for (const auto& s : ds.subjects) {
    for (const auto& e : s.episodes) {
      epis << s.id << ',' << detail::format_double(e.start) << ','
           << detail::format_double(e.duration) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  ModelSpec model;
  SamplerConfig sampler;
  std::string out_dir = ".";
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw config_error("config: unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
  detail::reject_unknown_keys(j, {"model", "sampler", "output"}, "top level");
  RunConfig cfg;
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown_keys(
        m,
        {"K", "domain_lo", "domain_hi", "beta_prior_sd", "gamma1_prior_sd",
         "gamma2_prior_sd", "tau_cauchy_scale", "anchor_nonnegative"},
        "model");
    detail::maybe(m, "K", cfg.model.K);
    detail::maybe(m, "domain_lo", cfg.model.domain_lo);
    detail::maybe(m, "domain_hi", cfg.model.domain_hi);
    detail::maybe(m, "beta_prior_sd", cfg.model.beta_prior_sd);
    detail::maybe(m, "gamma1_prior_sd", cfg.model.gamma1_prior_sd);
    detail::maybe(m, "gamma2_prior_sd", cfg.model.gamma2_prior_sd);
    detail::maybe(m, "tau_cauchy_scale", cfg.model.tau_cauchy_scale);
    detail::maybe(m, "anchor_nonnegative", cfg.model.anchor_nonnegative);
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    detail::reject_unknown_keys(
        s,
        {"chains", "warmup", "samples", "target_accept", "max_tree_depth", "seed",
         "adapt_step_size", "adapt_mass_matrix", "init_step_size", "rhat_threshold",
         "threads"},
        "sampler");
    detail::maybe(s, "chains", cfg.sampler.chains);
    detail::maybe(s, "warmup", cfg.sampler.warmup);
    detail::maybe(s, "samples", cfg.sampler.samples);
    detail::maybe(s, "target_accept", cfg.sampler.target_accept);
    detail::maybe(s, "max_tree_depth", cfg.sampler.max_tree_depth);
    detail::maybe(s, "seed", cfg.sampler.seed);
    detail::maybe(s, "adapt_step_size", cfg.sampler.adapt_step_size);
    detail::maybe(s, "adapt_mass_matrix", cfg.sampler.adapt_mass_matrix);
    detail::maybe(s, "init_step_size", cfg.sampler.init_step_size);
    detail::maybe(s, "rhat_threshold", cfg.sampler.rhat_threshold);
    detail::maybe(s, "threads", cfg.sampler.threads);
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    detail::reject_unknown_keys(o, {"dir"}, "output");
    detail::maybe(o, "dir", cfg.out_dir);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

/// FNV-1a hash of the canonical model-section serialization. Any edit to the
/// model spec changes the hash and invalidates downstream summaries.
inline std::uint64_t model_hash(const ModelSpec& spec) {
  json m;
  m["K"] = spec.K;
  m["domain_lo"] = spec.domain_lo;
  m["domain_hi"] = spec.domain_hi;
  m["beta_prior_sd"] = spec.beta_prior_sd;
  m["gamma1_prior_sd"] = spec.gamma1_prior_sd;
  m["gamma2_prior_sd"] = spec.gamma2_prior_sd;
  m["tau_cauchy_scale"] = spec.tau_cauchy_scale;
  m["anchor_nonnegative"] = spec.anchor_nonnegative;
  const std::string s = m.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Draws persistence (binary columnar, bit-exact round trip)
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kDrawsMagic[8] = {'F', 'L', 'A', 'M', 'D', 'R', 'W', '1'};

template <class T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
void read_raw(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw data_error("draws file truncated");
}

inline void write_string(std::ofstream& out, const std::string& s) {
  write_raw(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::ifstream& in) {
  std::uint32_t n = 0;
  read_raw(in, n);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw data_error("draws file truncated");
  return s;
}

inline void write_vec(std::ofstream& out, const Vec& v) {
  write_raw(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double) * v.size()));
}

inline Vec read_vec(std::ifstream& in) {
  std::uint64_t n = 0;
  read_raw(in, n);
  Vec v(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(sizeof(double) * n));
  if (!in) throw data_error("draws file truncated");
  return v;
}

}  // namespace detail

inline void save_fit(const FlameFit& fit, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open '" + path + "' for writing");
  out.write(detail::kDrawsMagic, sizeof detail::kDrawsMagic);
  detail::write_raw(out, model_hash(fit.spec));
  detail::write_raw(out, fit.sampler.seed);

  const auto& m = fit.spec;
  detail::write_raw(out, static_cast<std::int32_t>(m.K));
  detail::write_raw(out, m.domain_lo);
  detail::write_raw(out, m.domain_hi);
  detail::write_raw(out, m.beta_prior_sd);
  detail::write_raw(out, m.gamma1_prior_sd);
  detail::write_raw(out, m.gamma2_prior_sd);
  detail::write_raw(out, m.tau_cauchy_scale);
  detail::write_raw(out, static_cast<std::uint8_t>(m.anchor_nonnegative));

  const auto& s = fit.sampler;
  detail::write_raw(out, static_cast<std::int32_t>(s.chains));
  detail::write_raw(out, static_cast<std::int32_t>(s.warmup));
  detail::write_raw(out, static_cast<std::int32_t>(s.samples));
  detail::write_raw(out, s.target_accept);
  detail::write_raw(out, static_cast<std::int32_t>(s.max_tree_depth));
  detail::write_raw(out, static_cast<std::uint8_t>(s.adapt_step_size));
  detail::write_raw(out, static_cast<std::uint8_t>(s.adapt_mass_matrix));
  detail::write_raw(out, s.init_step_size);
  detail::write_raw(out, s.rhat_threshold);

  detail::write_raw(out, static_cast<std::int32_t>(fit.layout.p));
  detail::write_raw(out, static_cast<std::uint32_t>(fit.covariate_names.size()));
  for (const auto& name : fit.covariate_names) detail::write_string(out, name);

  detail::write_raw(out, static_cast<std::int32_t>(fit.draws.n_chains()));
  for (const auto& chain : fit.draws.chains) {
    const auto rows = static_cast<std::uint64_t>(chain.draws.rows());
    const auto cols = static_cast<std::uint64_t>(chain.draws.cols());
    detail::write_raw(out, rows);
    detail::write_raw(out, cols);
    out.write(reinterpret_cast<const char*>(chain.draws.data()),
              static_cast<std::streamsize>(sizeof(double) * rows * cols));
    out.write(reinterpret_cast<const char*>(chain.divergent.data()),
              static_cast<std::streamsize>(chain.divergent.size()));
    for (int d : chain.tree_depth) detail::write_raw(out, static_cast<std::int32_t>(d));
    for (double e : chain.step_size) detail::write_raw(out, e);
    detail::write_raw(out, chain.final_step_size);
    detail::write_vec(out, chain.inv_mass_diag);
  }
  if (!out) throw data_error("failed while writing '" + path + "'");
}

inline FlameFit load_fit(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open draws file '" + path + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, detail::kDrawsMagic, sizeof magic) != 0) {
    throw data_error("'" + path + "' is not a draws file");
  }
  FlameFit fit;
  std::uint64_t stored_hash = 0;
  detail::read_raw(in, stored_hash);
  detail::read_raw(in, fit.sampler.seed);

  std::int32_t k = 0;
  detail::read_raw(in, k);
  fit.spec.K = k;
  detail::read_raw(in, fit.spec.domain_lo);
  detail::read_raw(in, fit.spec.domain_hi);
  detail::read_raw(in, fit.spec.beta_prior_sd);
  detail::read_raw(in, fit.spec.gamma1_prior_sd);
  detail::read_raw(in, fit.spec.gamma2_prior_sd);
  detail::read_raw(in, fit.spec.tau_cauchy_scale);
  std::uint8_t anchored = 1;
  detail::read_raw(in, anchored);
  fit.spec.anchor_nonnegative = anchored != 0;

  std::int32_t i32 = 0;
  std::uint8_t u8 = 0;
  detail::read_raw(in, i32);
  fit.sampler.chains = i32;
  detail::read_raw(in, i32);
  fit.sampler.warmup = i32;
  detail::read_raw(in, i32);
  fit.sampler.samples = i32;
  detail::read_raw(in, fit.sampler.target_accept);
  detail::read_raw(in, i32);
  fit.sampler.max_tree_depth = i32;
  detail::read_raw(in, u8);
  fit.sampler.adapt_step_size = u8 != 0;
  detail::read_raw(in, u8);
  fit.sampler.adapt_mass_matrix = u8 != 0;
  detail::read_raw(in, fit.sampler.init_step_size);
  detail::read_raw(in, fit.sampler.rhat_threshold);

  detail::read_raw(in, i32);
  fit.layout = ParamLayout{i32, fit.spec.K};
  std::uint32_t name_count = 0;
  detail::read_raw(in, name_count);
  fit.covariate_names.resize(name_count);
  for (auto& name : fit.covariate_names) name = detail::read_string(in);

  std::int32_t n_chains = 0;
  detail::read_raw(in, n_chains);
  fit.draws.chains.resize(n_chains);
  for (auto& chain : fit.draws.chains) {
    std::uint64_t rows = 0, cols = 0;
    detail::read_raw(in, rows);
    detail::read_raw(in, cols);
    chain.draws.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(chain.draws.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    chain.divergent.resize(rows);
    in.read(reinterpret_cast<char*>(chain.divergent.data()),
            static_cast<std::streamsize>(rows));
    chain.tree_depth.resize(rows);
    for (auto& d : chain.tree_depth) {
      std::int32_t v = 0;
      detail::read_raw(in, v);
      d = v;
    }
    chain.step_size.resize(rows);
    for (auto& e : chain.step_size) detail::read_raw(in, e);
    detail::read_raw(in, chain.final_step_size);
    chain.inv_mass_diag = detail::read_vec(in);
    if (!in) throw data_error("draws file truncated");
  }
  fit.draws.unhealthy_divergences = fit.draws.divergent_fraction() > 0.25;
  fit.kv = build_knots(fit.spec.K, fit.spec.domain_lo, fit.spec.domain_hi);
  if (stored_hash != model_hash(fit.spec)) {
    throw data_error("'" + path + "': embedded config hash does not match its own model block (corrupt file)");
  }
  if (fit.draws.n_chains() >= 2 && fit.draws.samples_per_chain() >= 4) {
    fit.diagnostics = diagnose(fit.draws);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Scenario files and result serialization
// ---------------------------------------------------------------------------

struct ScenarioFile {
  std::vector<Scenario> scenarios;
  std::string contrast_a;  // defaults: the two last scenarios in file order
  std::string contrast_b;
};

inline ScenarioFile load_scenarios(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open scenarios file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error("scenarios file '" + path + "' is not valid JSON: " + e.what());
  }
  detail::reject_unknown_keys(j, {"scenarios", "contrast"}, "scenarios file");
  if (!j.contains("scenarios") || !j.at("scenarios").is_array() ||
      j.at("scenarios").empty()) {
    throw config_error("scenarios file: need a non-empty 'scenarios' array");
  }
  ScenarioFile sf;
  for (const auto& js : j.at("scenarios")) {
    detail::reject_unknown_keys(js, {"label", "episode_durations", "covariate_profile"},
                                "scenario");
    Scenario sc;
    sc.label = js.at("label").get<std::string>();
    for (const auto& d : js.at("episode_durations")) {
      sc.episode_durations.push_back(d.get<double>());
    }
    const auto prof = js.at("covariate_profile").get<std::vector<double>>();
    sc.covariate_profile = Eigen::Map<const Vec>(prof.data(),
                                                 static_cast<Eigen::Index>(prof.size()));
    sf.scenarios.push_back(std::move(sc));
  }
  if (j.contains("contrast")) {
    const auto c = j.at("contrast").get<std::vector<std::string>>();
    if (c.size() != 2) throw config_error("scenarios file: 'contrast' must list two labels");
    sf.contrast_a = c[0];
    sf.contrast_b = c[1];
  } else if (sf.scenarios.size() >= 2) {
    sf.contrast_a = sf.scenarios[sf.scenarios.size() - 2].label;
    sf.contrast_b = sf.scenarios.back().label;
  }
  return sf;
}

inline json interval_to_json(const IntervalSummary& s) {
  return json{{"mean", s.mean}, {"lower", s.lower}, {"upper", s.upper}};
}

inline json diagnostics_to_json(const Diagnostics& diag,
                                const std::vector<std::string>& names,
                                double rhat_threshold) {
  json params = json::array();
  for (std::size_t j = 0; j < diag.params.size(); ++j) {
    const auto& p = diag.params[j];
    json item;
    item["name"] = j < names.size() ? names[j] : ("param[" + std::to_string(j) + "]");
    item["rhat"] = p.degenerate ? json() : json(p.rhat);
    item["ess_bulk"] = p.ess_bulk;
    item["ess_tail"] = p.ess_tail;
    item["degenerate"] = p.degenerate;
    item["ess_above_total"] = p.ess_above_total;
    params.push_back(item);
  }
  json out;
  out["parameters"] = params;
  out["divergence_count"] = diag.divergence_count;
  out["divergent_fraction"] = diag.divergent_fraction;
  out["max_rhat"] = diag.max_rhat();
  out["min_ess_bulk"] = diag.min_ess_bulk();
  out["rhat_threshold"] = rhat_threshold;
  out["healthy"] = diag.healthy(rhat_threshold);
  return out;
}

inline void write_raf_csv(const RafEstimate& est, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open '" + path + "' for writing");
  out << "grid,mean,lower,upper\n";
  for (std::size_t g = 0; g < est.grid.size(); ++g) {
    out << detail::format_double(est.grid[g]) << ','
        << detail::format_double(est.mean[g]) << ','
        << detail::format_double(est.lower[g]) << ','
        << detail::format_double(est.upper[g]) << '\n';
  }
}

inline json scenario_summary_to_json(const ScenarioSummary& s) {
  return json{{"label", s.label}, {"probability", interval_to_json(s.probability)}};
}

inline void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

}  // namespace flame
