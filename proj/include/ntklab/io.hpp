#pragma once

// File formats: experiment configs as JSON, sweep rows as CSV, and the run
// manifest that every output carries.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "harness.hpp"

namespace ntklab {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolName = "ntklab";
inline constexpr const char* kToolVersion = "0.1.0";

// ---- configs -------------------------------------------------------------

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["id"] = c.id;
  j["kind"] = to_string(c.kind);
  j["n0"] = c.arch.n0;
  j["hidden"] = c.arch.hidden;
  j["dist"] = c.dist.name();
  if (c.x) j["x"] = *c.x;
  if (c.xnorm2) j["xnorm2"] = *c.xnorm2;
  j["trials"] = c.trials;
  j["seed"] = c.seed;
  j["lambda"] = c.lambda;
  j["target"] = c.target;
  j["shards"] = c.shards;
  j["oracle"] = c.oracle;
  j["convention"] = to_string(c.convention);
  return j;
}

namespace detail {

template <class T>
T json_field(const Json& j, const char* key, const T& fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace detail

// Missing fields take the ExperimentConfig defaults. Unknown keys are
// rejected so that typos do not silently run the default experiment.
inline ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  static const std::vector<std::string> known = {"id",    "kind",   "n0",     "hidden", "dist",
                                                 "x",     "xnorm2", "trials", "seed",   "lambda",
                                                 "target", "shards", "oracle", "convention"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("unknown config field '" + key + "'");
  ExperimentConfig c;
  c.id = detail::json_field<std::string>(j, "id", c.id);
  const std::string kind = detail::json_field<std::string>(j, "kind", "kernel");
  if (kind == "kernel") c.kind = ExperimentKind::kernel;
  else if (kind == "update") c.kind = ExperimentKind::update;
  else throw ValidationError("unknown experiment kind '" + kind + "'");
  if (!j.contains("n0") || !j.contains("hidden")) throw ValidationError("config needs n0 and hidden");
  c.arch.n0 = detail::json_field<int>(j, "n0", 0);
  c.arch.hidden = detail::json_field<std::vector<int>>(j, "hidden", {});
  c.dist = WeightDistribution::from_name(detail::json_field<std::string>(j, "dist", "normal"));
  if (j.contains("x") && !j.at("x").is_null()) c.x = detail::json_field<std::vector<double>>(j, "x", {});
  if (j.contains("xnorm2") && !j.at("xnorm2").is_null()) c.xnorm2 = detail::json_field<double>(j, "xnorm2", 0.0);
  c.trials = detail::json_field<long long>(j, "trials", c.trials);
  c.seed = detail::json_field<std::uint64_t>(j, "seed", c.seed);
  c.lambda = detail::json_field<double>(j, "lambda", c.lambda);
  c.target = detail::json_field<double>(j, "target", c.target);
  c.shards = detail::json_field<int>(j, "shards", c.shards);
  c.oracle = detail::json_field<bool>(j, "oracle", c.oracle);
  c.convention = bias_convention_from_name(detail::json_field<std::string>(j, "convention", "corrected"));
  c.validate();
  return c;
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(what + ": " + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json_text(ss.str(), path);
}

// A grid file is either a list of configs or {"configs": [...]}.
inline std::vector<ExperimentConfig> grid_from_json(const Json& j) {
  const Json* list = &j;
  if (j.is_object()) {
    if (!j.contains("configs")) throw ValidationError("grid object needs a 'configs' list");
    list = &j.at("configs");
  }
  if (!list->is_array()) throw ValidationError("grid must be a list of configs");
  std::vector<ExperimentConfig> out;
  for (const auto& item : *list) out.push_back(config_from_json(item));
  return out;
}

// ---- manifest --------------------------------------------------------------

struct RunManifest {
  std::string command;
  Json config = Json::object();
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  Json payload = Json::object();
};

inline Json manifest_to_json(const RunManifest& m) {
  Json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["wall_seconds"] = m.wall_seconds;
  j["payload"] = m.payload;
  return j;
}

// ---- CSV -------------------------------------------------------------------

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "experiment_id", "d",          "n0",          "widths",      "dist",     "beta_paper",
      "beta_hidden",   "trials",     "mean_K",      "se_mean_K",   "mean_Kw",  "mean_Kb",
      "mean_K2",       "se_K2",      "ratio",       "ratio_ci_lo", "ratio_ci_hi", "mean_dK",
      "mean_dK_lin",   "flip_rate",  "theory_mean", "theory_ratio_central", "oracle_mean"};
  return cols;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string csv_number(const std::string& column, double v) {
  if (!std::isfinite(v)) throw ContractError("non-finite value in CSV column '" + column + "'");
  return format_double(v);
}

inline std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

// Failed rows (error set) are not written as data; callers report them.
inline std::string csv_row(const SweepRow& r) {
  if (!r.error.empty()) throw ContractError("row '" + r.experiment_id + "' failed: " + r.error);
  std::vector<std::string> cells;
  auto num = [&](const char* col, double v) { cells.push_back(detail::csv_number(col, v)); };
  auto opt = [&](const char* col, const std::optional<double>& v) {
    cells.push_back(v ? detail::csv_number(col, *v) : std::string());
  };
  cells.push_back(detail::csv_text(r.experiment_id));
  cells.push_back(std::to_string(r.d));
  cells.push_back(std::to_string(r.n0));
  std::string widths;
  for (std::size_t i = 0; i < r.widths.size(); ++i) widths += (i ? ";" : "") + std::to_string(r.widths[i]);
  cells.push_back(widths);
  cells.push_back(detail::csv_text(r.dist));
  num("beta_paper", r.beta_paper);
  num("beta_hidden", r.beta_hidden);
  cells.push_back(std::to_string(r.trials));
  num("mean_K", r.mean_K);
  num("se_mean_K", r.se_mean_K);
  num("mean_Kw", r.mean_Kw);
  num("mean_Kb", r.mean_Kb);
  num("mean_K2", r.mean_K2);
  num("se_K2", r.se_K2);
  num("ratio", r.ratio);
  num("ratio_ci_lo", r.ratio_ci_lo);
  num("ratio_ci_hi", r.ratio_ci_hi);
  opt("mean_dK", r.mean_dK);
  opt("mean_dK_lin", r.mean_dK_lin);
  opt("flip_rate", r.flip_rate);
  num("theory_mean", r.theory_mean);
  num("theory_ratio_central", r.theory_ratio_central);
  opt("oracle_mean", r.oracle_mean);
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + cells[i];
  return line;
}

// The manifest goes on the first line as a comment, compact JSON.
inline void write_csv(std::ostream& os, const std::vector<SweepRow>& rows, const RunManifest& manifest) {
  std::vector<std::string> lines;
  for (const auto& r : rows) lines.push_back(csv_row(r));  // format everything before writing anything
  os << "# manifest: " << manifest_to_json(manifest).dump() << '\n';
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const auto& l : lines) os << l << '\n';
}

inline Json row_to_json(const SweepRow& r) {
  Json j;
  j["experiment_id"] = r.experiment_id;
  if (!r.error.empty()) {
    j["error"] = r.error;
    return j;
  }
  j["d"] = r.d;
  j["n0"] = r.n0;
  j["widths"] = r.widths;
  j["dist"] = r.dist;
  j["beta_paper"] = r.beta_paper;
  j["beta_hidden"] = r.beta_hidden;
  j["trials"] = r.trials;
  j["mean_K"] = r.mean_K;
  j["se_mean_K"] = r.se_mean_K;
  j["mean_Kw"] = r.mean_Kw;
  j["mean_Kb"] = r.mean_Kb;
  j["mean_K2"] = r.mean_K2;
  j["se_K2"] = r.se_K2;
  j["ratio"] = r.ratio;
  j["ratio_ci_lo"] = r.ratio_ci_lo;
  j["ratio_ci_hi"] = r.ratio_ci_hi;
  auto opt = [&](const char* k, const std::optional<double>& v) { j[k] = v ? Json(*v) : Json(nullptr); };
  opt("mean_dK", r.mean_dK);
  opt("mean_dK_lin", r.mean_dK_lin);
  opt("flip_rate", r.flip_rate);
  j["theory_mean"] = r.theory_mean;
  j["theory_ratio_central"] = r.theory_ratio_central;
  opt("oracle_mean", r.oracle_mean);
  return j;
}

}  // namespace ntklab
