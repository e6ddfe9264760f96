#pragma once

// Data ingestion, simulation scenarios, run configuration and file formats.
//
// Chain files are newline-delimited JSON: one header line followed by one
// line per retained iteration. Regimes are 1-based in every file.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdseir/diagnostics.hpp"
#include "bdseir/model.hpp"
#include "bdseir/pg_sampler.hpp"
#include "bdseir/rng.hpp"

namespace bdseir {

namespace fs = std::filesystem;
using json = nlohmann::json;

class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kChainSchemaVersion = 1;
inline constexpr int kCheckpointSchemaVersion = 1;

/// %.17g formatting used by every delimited output.
inline std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Datasets

enum class Aggregation { None, Weekly };

inline std::string to_string(Aggregation a) { return a == Aggregation::Weekly ? "weekly" : "none"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "none") return Aggregation::None;
  if (s == "weekly") return Aggregation::Weekly;
  throw ConfigError("unknown aggregation '" + s + "' (expected none or weekly)");
}

struct Dataset {
  std::vector<std::string> labels;
  std::vector<double> y;
  double population = 0.0;  // 0 when the input was already proportions
  std::string aggregation_rule = "none";

  std::size_t T() const noexcept { return y.size(); }

  void validate() const {
    if (labels.size() != y.size()) throw DataError("dataset labels and values differ in length");
    for (double v : y)
      if (!(v > 0.0 && v < 1.0)) throw DataError("dataset values must lie in (0,1)");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(b, e - b + 1));
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

/// Reads `label,value` rows. A first row whose value is not numeric is a
/// header; any later non-numeric value is an error naming its line.
inline std::pair<std::vector<std::string>, std::vector<double>> read_two_columns(
    const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  std::vector<std::string> labels;
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected two columns");
    const std::string label = trim(std::string_view(line).substr(0, comma));
    const std::string field = trim(std::string_view(line).substr(comma + 1));
    if (field.find(',') != std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected two columns");
    const auto v = parse_number(field);
    if (!v) {
      if (labels.empty() && lineno == 1) continue;
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value '" +
                      field + "'");
    }
    labels.push_back(label);
    values.push_back(*v);
  }
  if (values.empty()) throw DataError("data file " + path.string() + " has no rows");
  return {labels, values};
}

}  // namespace detail

/// Mean of each block of 7 consecutive values (a trailing partial week uses
/// the days available). Labels are the first label of each week.
inline std::pair<std::vector<std::string>, std::vector<double>> aggregate_weekly(
    const std::vector<std::string>& labels, const std::vector<double>& values) {
  std::vector<std::string> out_labels;
  std::vector<double> out_values;
  for (std::size_t start = 0; start < values.size(); start += 7) {
    const std::size_t end = std::min(start + 7, values.size());
    double s = 0.0;
    for (std::size_t i = start; i < end; ++i) s += values[i];
    out_labels.push_back(labels[start]);
    out_values.push_back(s / static_cast<double>(end - start));
  }
  return {out_labels, out_values};
}

inline Dataset load_counts(const fs::path& path, double population, Aggregation aggregation) {
  if (!(population > 0.0)) throw DataError("population must be positive");
  auto [labels, counts] = detail::read_two_columns(path);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 0.0) throw DataError("row " + std::to_string(i + 1) + ": negative count");
    if (counts[i] > population)
      throw DataError("row " + std::to_string(i + 1) + ": count exceeds population");
  }
  Dataset d;
  d.population = population;
  if (aggregation == Aggregation::Weekly) {
    std::tie(labels, counts) = aggregate_weekly(labels, counts);
    d.aggregation_rule = "weekly mean of daily values";
  }
  d.labels = std::move(labels);
  for (double c : counts) d.y.push_back(clamp_observation(c / population));
  return d;
}

/// Same as load_counts but the second column already holds proportions.
inline Dataset load_proportions(const fs::path& path, Aggregation aggregation) {
  auto [labels, values] = detail::read_two_columns(path);
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!(values[i] >= 0.0 && values[i] <= 1.0))
      throw DataError("row " + std::to_string(i + 1) + ": proportion outside [0,1]");
  Dataset d;
  if (aggregation == Aggregation::Weekly) {
    std::tie(labels, values) = aggregate_weekly(labels, values);
    d.aggregation_rule = "weekly mean of daily values";
  }
  d.labels = std::move(labels);
  for (double v : values) d.y.push_back(clamp_observation(v));
  return d;
}

inline void write_dataset(const fs::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "label,y\n";
  for (std::size_t t = 0; t < d.T(); ++t) out << d.labels[t] << ',' << fmt17(d.y[t]) << '\n';
}

// ---------------------------------------------------------------------------
// Simulation scenarios

struct Scenario {
  std::string name;
  ParameterSet truth;
  PriorSpec priors;
  std::size_t T = 0;
  SeirState theta1;
  int x1 = 0;
};

inline std::vector<std::string> scenario_names() { return {"two-regime", "three-regime"}; }

inline Scenario named_scenario(const std::string& name) {
  Scenario s;
  s.name = name;
  s.theta1 = SeirState{{0.99, 0.001, 0.003, 0.006}};
  s.x1 = 0;
  if (name == "two-regime") {
    s.T = 150;
    s.truth.alpha = 1.0 / 3.0;
    s.truth.beta = 0.39;
    s.truth.gamma = 0.18;
    s.truth.lambda = 2500.0;
    s.truth.kappa = 5500.0;
    s.truth.ident = {{0.25, 1}};
    s.truth.modifiers = {1.0, 0.1};
    s.truth.trans = TransitionMatrix::from_rows({{0.9, 0.1}, {0.1, 0.9}});
    s.priors = PriorSpec{};
  } else if (name == "three-regime") {
    s.T = 175;
    s.truth.alpha = 0.3;
    s.truth.beta = 0.5;
    s.truth.gamma = 0.2;
    s.truth.lambda = 2000.0;
    s.truth.kappa = 8000.0;
    s.truth.ident = {{0.25, 1}};
    s.truth.modifiers = {1.0, 0.6, 0.05};
    s.truth.trans = TransitionMatrix::from_rows(
        {{0.94, 0.03, 0.03}, {0.03, 0.94, 0.03}, {0.03, 0.03, 0.94}});
    s.priors = PriorSpec{};
    s.priors.lambda = {20.0, 0.01};
    s.priors.rows = PriorSpec::sticky_rows(3, 10.0, 1.0);
  } else {
    std::string known;
    for (const auto& n : scenario_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown scenario '" + name + "' (known: " + known + ")");
  }
  return s;
}

struct Simulation {
  Dataset data;
  LatentPath path;
  ParameterSet truth;
  PriorSpec priors;
};

inline Simulation generate_simulation(const Scenario& s, std::uint64_t seed) {
  RandomStream rng(mix64(seed), 0, StreamPurpose::Simulation, 0, 0);
  auto sim = simulate_dataset(s.truth, s.priors, s.T, std::make_optional(std::make_pair(s.theta1, s.x1)), rng);
  Simulation out;
  out.truth = s.truth;
  out.priors = s.priors;
  out.path = std::move(sim.path);
  out.data.y = std::move(sim.y);
  for (std::size_t t = 0; t < s.T; ++t) out.data.labels.push_back(std::to_string(t + 1));
  return out;
}

inline Simulation generate_simulation(const std::string& scenario, std::uint64_t seed) {
  return generate_simulation(named_scenario(scenario), seed);
}

/// t,S,E,I,R,regime (regime 1-based).
inline void write_truth_path(const fs::path& path, const LatentPath& p) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "t,S,E,I,R,regime\n";
  for (std::size_t t = 0; t < p.size(); ++t) {
    out << t + 1;
    for (double v : p.thetas[t].c) out << ',' << fmt17(v);
    out << ',' << p.regimes[t] + 1 << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON conversions

namespace detail {

inline double json_upper(const json& j) {
  if (j.is_null()) return kInf;
  if (j.is_string() && (j.get<std::string>() == "inf" || j.get<std::string>() == "Infinity")) return kInf;
  return j.get<double>();
}

inline json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double number_from_json(const json& j) {
  if (j.is_null()) return std::nan("");
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return kNegInf;
    if (s == "nan") return std::nan("");
    throw DataError("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

/// Throws ConfigError naming the first key of `obj` not in `allowed`.
inline void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + where + "." + key + "'");
  }
}

inline const json& require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError("missing key '" + where + "." + key + "'");
  return obj.at(key);
}

}  // namespace detail

inline json to_json(const TruncNormalParams& p) {
  return {{"mean", p.mean}, {"sd", p.sd}, {"lower", p.lower},
          {"upper", std::isfinite(p.upper) ? json(p.upper) : json(nullptr)}};
}

inline TruncNormalParams trunc_normal_from_json(const json& j, const std::string& where) {
  detail::check_keys(j, {"mean", "sd", "lower", "upper"}, where);
  TruncNormalParams p{detail::require(j, "mean", where).get<double>(),
                      detail::require(j, "sd", where).get<double>(),
                      detail::require(j, "lower", where).get<double>(),
                      detail::json_upper(detail::require(j, "upper", where))};
  return p;
}

inline json to_json(const GammaParams& p) { return {{"shape", p.shape}, {"rate", p.rate}}; }

inline GammaParams gamma_from_json(const json& j, const std::string& where) {
  detail::check_keys(j, {"shape", "rate"}, where);
  return {detail::require(j, "shape", where).get<double>(), detail::require(j, "rate", where).get<double>()};
}

inline json priors_to_json(const PriorSpec& p) {
  json ident = json::array();
  for (const auto& ip : p.ident) ident.push_back(to_json(ip.prior));
  json rows = json::array();
  for (const auto& r : p.rows) rows.push_back(r.concentration);
  return {{"alpha", to_json(p.alpha)},   {"beta", to_json(p.beta)},
          {"gamma", to_json(p.gamma)},   {"lambda", to_json(p.lambda)},
          {"kappa", to_json(p.kappa)},   {"ident", ident},
          {"transition_rows", rows},     {"theta1", p.theta1.concentration}};
}

inline json params_to_json(const ParameterSet& p) {
  json ident = json::array();
  for (const auto& r : p.ident) ident.push_back({{"rate", r.rate}, {"start", r.start}});
  json trans = json::array();
  for (std::size_t k = 0; k < p.regimes(); ++k)
    trans.push_back(std::vector<double>(p.trans.row(k).begin(), p.trans.row(k).end()));
  return {{"alpha", p.alpha},   {"beta", p.beta},         {"gamma", p.gamma},
          {"lambda", p.lambda}, {"kappa", p.kappa},       {"ident", ident},
          {"pi", trans},        {"f", p.modifiers},       {"rk4_substeps", p.rk4_substeps}};
}

inline ParameterSet params_from_json(const json& j) {
  ParameterSet p;
  p.alpha = j.at("alpha").get<double>();
  p.beta = j.at("beta").get<double>();
  p.gamma = j.at("gamma").get<double>();
  p.lambda = j.at("lambda").get<double>();
  p.kappa = j.at("kappa").get<double>();
  p.ident.clear();
  for (const auto& r : j.at("ident")) p.ident.push_back({r.at("rate").get<double>(), r.at("start").get<int>()});
  p.trans = TransitionMatrix::from_rows(j.at("pi").get<std::vector<std::vector<double>>>());
  p.modifiers = j.at("f").get<std::vector<double>>();
  p.rk4_substeps = j.value("rk4_substeps", 1);
  return p;
}

inline json path_to_json(const LatentPath& path) {
  json theta = json::array();
  for (const auto& s : path.thetas) theta.push_back(s.c);
  std::vector<int> x(path.regimes);
  for (auto& v : x) v += 1;
  return {{"theta", theta}, {"x", x}};
}

inline LatentPath path_from_json(const json& j) {
  LatentPath p;
  for (const auto& s : j.at("theta")) p.thetas.push_back(SeirState{s.get<std::array<double, 4>>()});
  p.regimes = j.at("x").get<std::vector<int>>();
  for (auto& v : p.regimes) v -= 1;
  return p;
}

inline json steps_to_json(const StepSizes& s) {
  json o = json::object();
  for (std::size_t i = 0; i < s.size(); ++i) o[s.slots[i].name()] = s.values[i];
  return o;
}

/// Fills `into` (already shaped for the model) from a name -> value object.
inline void steps_from_json(const json& j, StepSizes& into, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [name, value] : j.items()) {
    const auto i = into.find(name);
    if (!i) throw ConfigError("unknown key '" + where + "." + name + "'");
    into.values[*i] = value.get<double>();
  }
}

// ---------------------------------------------------------------------------
// Run configuration

struct OutputConfig {
  fs::path directory;  // empty when the config does not set one
  bool dump_particles = false;
};

struct DataConfig {
  fs::path path;
  std::string format = "counts";  // counts | proportions
  double population = 0.0;
  Aggregation aggregation = Aggregation::None;
};

struct RunConfig {
  std::size_t K = 2;
  PriorSpec priors;
  int rk4_substeps = 1;
  SamplerConfig sampler;
  int threads = 1;
  std::optional<DataConfig> data;
  OutputConfig output;
  std::uint64_t hash = 0;
  json source;
};

/// FNV-1a 64-bit.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Parses a configuration document. Relative data paths are resolved against
/// `base_dir`.
inline RunConfig parse_config(const json& doc, const fs::path& base_dir = {}) {
  using detail::check_keys;
  using detail::require;
  check_keys(doc, {"model", "priors", "sampler", "data", "output"}, "config");
  RunConfig cfg;
  cfg.source = doc;
  cfg.hash = fnv1a64(doc.dump());

  const json& model = require(doc, "model", "config");
  check_keys(model, {"K", "ident_change_times", "rk4_substeps"}, "model");
  cfg.K = require(model, "K", "model").get<std::size_t>();
  if (cfg.K < 1) throw ConfigError("model.K must be >= 1");
  const auto change_times =
      model.contains("ident_change_times") ? model.at("ident_change_times").get<std::vector<int>>()
                                           : std::vector<int>{1};
  cfg.rk4_substeps = model.value("rk4_substeps", 1);

  const json& pri = require(doc, "priors", "config");
  check_keys(pri, {"alpha", "beta", "gamma", "lambda", "kappa", "ident", "transition_rows", "theta1"},
             "priors");
  PriorSpec& p = cfg.priors;
  p.alpha = trunc_normal_from_json(require(pri, "alpha", "priors"), "priors.alpha");
  p.beta = trunc_normal_from_json(require(pri, "beta", "priors"), "priors.beta");
  p.gamma = trunc_normal_from_json(require(pri, "gamma", "priors"), "priors.gamma");
  p.lambda = gamma_from_json(require(pri, "lambda", "priors"), "priors.lambda");
  p.kappa = gamma_from_json(require(pri, "kappa", "priors"), "priors.kappa");
  const json& ident = require(pri, "ident", "priors");
  if (!ident.is_array() || ident.size() != change_times.size())
    throw ConfigError("priors.ident must list one prior per model.ident_change_times entry");
  p.ident.clear();
  for (std::size_t j = 0; j < ident.size(); ++j)
    p.ident.push_back({trunc_normal_from_json(ident[j], "priors.ident[" + std::to_string(j) + "]"),
                       change_times[j]});
  p.rows.clear();
  if (cfg.K == 1 && !pri.contains("transition_rows")) {
    p.rows = {DirichletParams{{1.0}}};
  } else {
    for (const auto& r : require(pri, "transition_rows", "priors"))
      p.rows.push_back(DirichletParams{r.get<std::vector<double>>()});
  }
  if (p.rows.size() != cfg.K)
    throw ConfigError("priors.transition_rows must have model.K rows");
  p.theta1 = DirichletParams{require(pri, "theta1", "priors").get<std::vector<double>>()};
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("priors: ") + e.what());
  }

  if (doc.contains("sampler")) {
    const json& s = doc.at("sampler");
    check_keys(s, {"n_iterations", "burn_in", "m_per_regime", "mh_sweeps", "thin", "seed", "step_sizes",
                   "tune", "target_accept", "checkpoint_every", "threads"},
               "sampler");
    SamplerConfig& sc = cfg.sampler;
    sc.n_iterations = s.value("n_iterations", sc.n_iterations);
    sc.burn_in = s.value("burn_in", sc.burn_in);
    sc.m_per_regime = s.value("m_per_regime", sc.m_per_regime);
    sc.mh_sweeps = s.value("mh_sweeps", sc.mh_sweeps);
    sc.thin = s.value("thin", sc.thin);
    sc.seed = s.value("seed", sc.seed);
    sc.tune = s.value("tune", sc.tune);
    sc.target_accept = s.value("target_accept", sc.target_accept);
    sc.checkpoint_every = s.value("checkpoint_every", sc.checkpoint_every);
    cfg.threads = s.value("threads", 1);
    if (s.contains("step_sizes")) {
      auto steps = StepSizes::defaults(cfg.K, p.ident.size());
      steps_from_json(s.at("step_sizes"), steps, "sampler.step_sizes");
      sc.step_sizes = steps;
    }
  }
  cfg.sampler.engine.threads = cfg.threads;
  try {
    cfg.sampler.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("sampler: ") + e.what());
  }

  if (doc.contains("data")) {
    const json& d = doc.at("data");
    check_keys(d, {"path", "format", "population", "aggregation"}, "data");
    DataConfig dc;
    dc.path = require(d, "path", "data").get<std::string>();
    if (dc.path.is_relative() && !base_dir.empty()) dc.path = base_dir / dc.path;
    dc.format = d.value("format", std::string("counts"));
    if (dc.format != "counts" && dc.format != "proportions")
      throw ConfigError("data.format must be counts or proportions");
    if (dc.format == "counts") dc.population = require(d, "population", "data").get<double>();
    dc.aggregation = parse_aggregation(d.value("aggregation", std::string("none")));
    cfg.data = dc;
  }

  if (doc.contains("output")) {
    const json& o = doc.at("output");
    check_keys(o, {"directory", "dump_particles"}, "output");
    if (o.contains("directory")) {
      cfg.output.directory = o.at("directory").get<std::string>();
      if (cfg.output.directory.is_relative() && !base_dir.empty())
        cfg.output.directory = base_dir / cfg.output.directory;
    }
    cfg.output.dump_particles = o.value("dump_particles", false);
  }
  return cfg;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  try {
    return parse_config(doc, path.parent_path());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

/// Loads the dataset referenced by the config's data block.
inline Dataset load_dataset(const DataConfig& dc) {
  if (dc.format == "counts") return load_counts(dc.path, dc.population, dc.aggregation);
  return load_proportions(dc.path, dc.aggregation);
}

/// A complete config document for fitting a scenario's simulated data.
inline json scenario_config_template(const Scenario& s, const std::string& data_file) {
  return {{"model", {{"K", s.truth.regimes()}, {"ident_change_times", {1}}, {"rk4_substeps", 1}}},
          {"priors", priors_to_json(s.priors)},
          {"sampler",
           {{"n_iterations", 4000}, {"burn_in", 1000}, {"m_per_regime", 50}, {"mh_sweeps", 5},
            {"thin", 1}, {"seed", 1}, {"tune", true}, {"target_accept", 0.35}, {"checkpoint_every", 100}}},
          {"data", {{"path", data_file}, {"format", "proportions"}, {"aggregation", "none"}}},
          {"output", {{"directory", "fit"}, {"dump_particles", false}}}};
}

// ---------------------------------------------------------------------------
// Chain files

struct ChainHeader {
  int schema_version = kChainSchemaVersion;
  std::size_t K = 0;
  std::size_t T = 0;
  std::size_t J = 1;
  std::string config_hash;
  std::size_t chain = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> labels;
  std::vector<double> y;
  std::string aggregation_rule = "none";

  friend bool operator==(const ChainHeader&, const ChainHeader&) = default;
};

inline json header_to_json(const ChainHeader& h) {
  return {{"kind", "header"},   {"schema_version", h.schema_version},
          {"K", h.K},           {"T", h.T},
          {"J", h.J},           {"config_hash", h.config_hash},
          {"chain", h.chain},   {"seed", h.seed},
          {"labels", h.labels}, {"y", h.y},
          {"aggregation", h.aggregation_rule}};
}

inline ChainHeader header_from_json(const json& j) {
  if (!j.contains("kind") || j.at("kind") != "header") throw DataError("chain file has no header line");
  ChainHeader h;
  h.schema_version = j.at("schema_version").get<int>();
  if (h.schema_version != kChainSchemaVersion)
    throw DataError("chain file schema version " + std::to_string(h.schema_version) +
                    " is not supported (expected " + std::to_string(kChainSchemaVersion) + ")");
  h.K = j.at("K").get<std::size_t>();
  h.T = j.at("T").get<std::size_t>();
  h.J = j.at("J").get<std::size_t>();
  h.config_hash = j.at("config_hash").get<std::string>();
  h.chain = j.at("chain").get<std::size_t>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.labels = j.at("labels").get<std::vector<std::string>>();
  h.y = j.at("y").get<std::vector<double>>();
  h.aggregation_rule = j.value("aggregation", std::string("none"));
  return h;
}

inline json record_to_json(const ChainRecord& r) {
  json j = {{"kind", "record"},
            {"iteration", r.iteration},
            {"log_marginal", detail::json_number(r.log_marginal)},
            {"params", params_to_json(r.params)},
            {"path", path_to_json(r.path)},
            {"accepts", r.accepts},
            {"proposals", r.proposals}};
  return j;
}

inline ChainRecord record_from_json(const json& j) {
  if (!j.contains("kind") || j.at("kind") != "record") throw DataError("expected a record line");
  ChainRecord r;
  r.iteration = j.at("iteration").get<std::size_t>();
  r.log_marginal = detail::number_from_json(j.at("log_marginal"));
  r.params = params_from_json(j.at("params"));
  r.path = path_from_json(j.at("path"));
  r.accepts = j.at("accepts").get<std::vector<std::uint32_t>>();
  r.proposals = j.at("proposals").get<std::vector<std::uint32_t>>();
  return r;
}

/// Streams one chain to disk, one flushed line per record.
class ChainWriter {
public:
  /// Creates (or truncates) `path` and writes the header.
  ChainWriter(const fs::path& path, const ChainHeader& header) : out_(path, std::ios::trunc) {
    if (!out_) throw DataError("cannot write chain file " + path.string());
    out_ << header_to_json(header).dump() << '\n';
    out_.flush();
  }

  /// Opens an existing chain file for appending.
  static ChainWriter append(const fs::path& path) { return ChainWriter(path); }

  void write(const ChainRecord& r) {
    out_ << record_to_json(r).dump() << '\n';
    out_.flush();
    if (!out_) throw DataError("failed writing chain record");
  }

private:
  explicit ChainWriter(const fs::path& path) : out_(path, std::ios::app) {
    if (!out_) throw DataError("cannot append to chain file " + path.string());
  }
  std::ofstream out_;
};

struct ChainFile {
  ChainHeader header;
  std::vector<ChainRecord> records;
};

/// Reads a chain file. A final line that is incomplete or unparsable is
/// reported as truncation, naming the last complete record.
inline ChainFile read_chain(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open chain file " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ChainFile f;
  std::size_t pos = 0;
  std::size_t lineno = 0;
  auto truncated = [&]() {
    if (f.records.empty())
      return DataError("chain file " + path.string() + " is truncated: no complete record");
    return DataError("chain file " + path.string() + " is truncated after record " +
                     std::to_string(f.records.size()) + " (iteration " +
                     std::to_string(f.records.back().iteration) + ")");
  };
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = content.substr(pos, complete ? nl - pos : std::string::npos);
    pos = complete ? nl + 1 : content.size();
    ++lineno;
    if (line.empty() && complete) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      if (lineno == 1) throw DataError("chain file " + path.string() + " has a malformed header");
      throw truncated();
    }
    if (lineno == 1) {
      f.header = header_from_json(j);
      continue;
    }
    if (!complete) throw truncated();
    try {
      f.records.push_back(record_from_json(j));
    } catch (const json::exception&) {
      throw truncated();
    }
  }
  if (lineno == 0) throw DataError("chain file " + path.string() + " is empty");
  return f;
}

/// Keeps the header and the first `n_records` records of a chain file.
inline void truncate_chain_file(const fs::path& path, std::size_t n_records) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open chain file " + path.string());
  std::string kept;
  std::string line;
  std::size_t lines = 0;
  while (lines < n_records + 1 && std::getline(in, line)) {
    if (in.eof()) break;  // unterminated final line
    kept += line;
    kept += '\n';
    ++lines;
  }
  in.close();
  if (lines < n_records + 1)
    throw DataError("chain file " + path.string() + " holds fewer records than the checkpoint");
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << kept;
    if (!out) throw DataError("cannot rewrite chain file " + path.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json checkpoint_to_json(const PgCheckpoint& c) {
  return {{"schema_version", kCheckpointSchemaVersion},
          {"seed", c.seed},
          {"next_iteration", c.next_iteration},
          {"records_emitted", c.records_emitted},
          {"degenerate_iterations", c.degenerate_iterations},
          {"params", params_to_json(c.params)},
          {"reference", path_to_json(c.reference)},
          {"steps", steps_to_json(c.steps)},
          {"tune_accepts", c.tune_accepts},
          {"tune_proposals", c.tune_proposals},
          {"total_accepts", c.total_accepts},
          {"total_proposals", c.total_proposals}};
}

inline PgCheckpoint checkpoint_from_json(const json& j) {
  if (j.value("schema_version", 0) != kCheckpointSchemaVersion)
    throw DataError("checkpoint schema version mismatch");
  PgCheckpoint c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.next_iteration = j.at("next_iteration").get<std::size_t>();
  c.records_emitted = j.at("records_emitted").get<std::size_t>();
  c.degenerate_iterations = j.at("degenerate_iterations").get<std::size_t>();
  c.params = params_from_json(j.at("params"));
  c.reference = path_from_json(j.at("reference"));
  c.steps = StepSizes::defaults(c.params.regimes(), c.params.ident.size());
  steps_from_json(j.at("steps"), c.steps, "steps");
  c.tune_accepts = j.at("tune_accepts").get<std::vector<std::uint64_t>>();
  c.tune_proposals = j.at("tune_proposals").get<std::vector<std::uint64_t>>();
  c.total_accepts = j.at("total_accepts").get<std::vector<std::uint64_t>>();
  c.total_proposals = j.at("total_proposals").get<std::vector<std::uint64_t>>();
  return c;
}

/// Writes through a temporary file and rename so a crash never leaves a
/// half-written checkpoint.
inline void write_checkpoint(const fs::path& path, const PgCheckpoint& c) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out << checkpoint_to_json(c).dump() << '\n';
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline PgCheckpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  try {
    return checkpoint_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Delimited outputs

inline void write_summary_csv(std::ostream& out, const PosteriorSummary& s) {
  out << "parameter,mean,median,sd,ci_lo,ci_hi\n";
  for (const auto& p : s.parameters)
    out << p.name << ',' << fmt17(p.mean) << ',' << fmt17(p.median) << ',' << fmt17(p.sd) << ','
        << fmt17(p.ci_lo) << ',' << fmt17(p.ci_hi) << '\n';
}

inline void write_regime_csv(std::ostream& out, const PosteriorSummary& s,
                             const std::vector<std::string>& labels, std::span<const double> y) {
  out << "t,label";
  for (std::size_t k = 0; k < s.K; ++k) out << ",p_regime_" << k + 1;
  out << ",y_obs,Ey_mean,Ey_lo,Ey_hi\n";
  for (std::size_t t = 0; t < s.T; ++t) {
    out << t + 1 << ',' << (t < labels.size() ? labels[t] : std::to_string(t + 1));
    for (double p : s.regime_probs[t]) out << ',' << fmt17(p);
    out << ',' << (t < y.size() ? fmt17(y[t]) : "") << ',' << fmt17(s.expected_y[t].mean) << ','
        << fmt17(s.expected_y[t].lo) << ',' << fmt17(s.expected_y[t].hi) << '\n';
  }
}

inline void write_seir_csv(std::ostream& out, const PosteriorSummary& s) {
  out << "t";
  for (const char* c : {"S", "E", "I", "R"}) out << ',' << c << "_mean," << c << "_lo," << c << "_hi";
  out << '\n';
  for (std::size_t t = 0; t < s.T; ++t) {
    out << t + 1;
    for (const auto& b : s.seir[t]) out << ',' << fmt17(b.mean) << ',' << fmt17(b.lo) << ',' << fmt17(b.hi);
    out << '\n';
  }
}

inline void write_model_selection_csv(std::ostream& out, const ModelSelectionReport& rep) {
  out << "K,log_ml_mean,log_ml_sd\n";
  for (const auto& r : rep.rows) {
    if (r.ok())
      out << r.K << ',' << fmt17(r.log_ml_mean) << ',' << fmt17(r.log_ml_sd) << '\n';
    else
      out << r.K << ",nan,nan\n";
  }
}

inline void write_rhat_csv(std::ostream& out, const std::vector<RhatEntry>& table) {
  out << "parameter,rhat,status\n";
  for (const auto& e : table) out << e.name << ',' << fmt17(e.rhat) << ',' << (e.pass ? "PASS" : "FAIL") << '\n';
}

}  // namespace bdseir
