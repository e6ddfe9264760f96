#pragma once

// Command-line front end: simulate, fit, select, diagnose, summarize.
// Progress goes to stderr; data goes to files (and tables also to stdout).

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bdseir/data_io.hpp"
#include "bdseir/diagnostics.hpp"
#include "bdseir/parallel.hpp"
#include "bdseir/pg_sampler.hpp"

namespace bdseir {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kOutEnvVar = "BDSEIR_OUT";

namespace cli_detail {

/// Thrown by the test-only --stop-after flag to emulate an interrupted run.
struct Interrupted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline fs::path resolve_out(const std::string& flag, const fs::path& from_config) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv(kOutEnvVar); env && *env) return env;
  return "bdseir_out";
}

inline std::vector<std::size_t> parse_k_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 1) throw ConfigError("--K expects a comma-separated list of positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("--K expects at least one value");
  return out;
}

/// Prior for a K other than the configured one: same scalar priors, sticky
/// Dir(10, 1, ..., 1) transition rows.
inline PriorSpec priors_for_k(const PriorSpec& base, std::size_t K) {
  if (base.regimes() == K) return base;
  PriorSpec p = base;
  p.rows = K == 1 ? std::vector<DirichletParams>{DirichletParams{{1.0}}} : PriorSpec::sticky_rows(K, 10.0, 1.0);
  return p;
}

inline std::string chain_file_name(std::size_t chain) { return "chain_" + std::to_string(chain + 1) + ".jsonl"; }
inline std::string checkpoint_file_name(std::size_t chain) {
  return "checkpoint_" + std::to_string(chain + 1) + ".json";
}

struct Reporter {
  std::ostream& err;
  std::mutex mutex;
  void line(const std::string& s) {
    std::lock_guard lock(mutex);
    err << s << '\n';
    err.flush();
  }
};

inline std::vector<ChainRecord> load_records(const std::vector<std::string>& files,
                                             std::vector<ChainFile>* keep = nullptr) {
  std::vector<ChainRecord> all;
  for (const auto& f : files) {
    auto cf = read_chain(f);
    all.insert(all.end(), cf.records.begin(), cf.records.end());
    if (keep) keep->push_back(std::move(cf));
  }
  return all;
}

inline int cmd_simulate(const std::string& scenario, std::uint64_t seed, const fs::path& out,
                        Reporter& rep) {
  const auto sc = named_scenario(scenario);
  const auto sim = generate_simulation(sc, seed);
  fs::create_directories(out);
  write_dataset(out / "observations.csv", sim.data);
  write_truth_path(out / "truth_path.csv", sim.path);
  {
    std::ofstream f(out / "truth_params.json");
    json j = params_to_json(sim.truth);
    j["R0"] = sim.truth.basic_reproduction_number();
    j["scenario"] = scenario;
    j["seed"] = seed;
    f << j.dump(2) << '\n';
  }
  {
    std::ofstream f(out / "config.json");
    f << scenario_config_template(sc, "observations.csv").dump(2) << '\n';
  }
  rep.line("simulate: wrote " + std::to_string(sim.data.T()) + " observations of scenario '" +
           scenario + "' to " + out.string());
  return kExitOk;
}

struct FitOptions {
  std::optional<std::uint64_t> seed;
  std::size_t chains = 2;
  int jobs = 1;
  bool resume = false;
  std::size_t stop_after = 0;
};

inline int cmd_fit(const RunConfig& cfg, const FitOptions& opt, const fs::path& out, Reporter& rep) {
  if (!cfg.data) throw ConfigError("fit: the config has no data block");
  const Dataset data = load_dataset(*cfg.data);
  data.validate();
  fs::create_directories(out);
  const std::uint64_t base_seed = opt.seed.value_or(cfg.sampler.seed);
  const std::size_t K = cfg.K;
  const std::size_t J = cfg.priors.ident.size();
  const auto slots = parameter_slots(K, J);

  json manifest = {{"config_hash", hex64(cfg.hash)}, {"K", K}, {"T", data.T()},
                   {"base_seed", base_seed},        {"n_iterations", cfg.sampler.n_iterations},
                   {"burn_in", cfg.sampler.burn_in}, {"m_per_regime", cfg.sampler.m_per_regime},
                   {"aggregation", data.aggregation_rule}, {"chains", json::array()}};
  for (std::size_t c = 0; c < opt.chains; ++c)
    manifest["chains"].push_back({{"chain", c + 1}, {"seed", base_seed + c}, {"file", chain_file_name(c)},
                                  {"checkpoint", checkpoint_file_name(c)}});
  {
    std::ofstream f(out / "manifest.json");
    f << manifest.dump(2) << '\n';
  }
  {
    std::ofstream f(out / "config_used.json");
    f << cfg.source.dump(2) << '\n';
  }

  std::vector<PgResult> results(opt.chains);
  parallel_for_tasks(opt.chains, opt.jobs, [&](std::size_t c) {
    SamplerConfig sc = cfg.sampler;
    sc.seed = base_seed + c;
    const fs::path chain_path = out / chain_file_name(c);
    const fs::path ckpt_path = out / checkpoint_file_name(c);
    const std::string tag = "chain " + std::to_string(c + 1) + ": ";

    std::optional<PgCheckpoint> resume;
    std::optional<ChainWriter> writer;
    ChainHeader header;
    header.K = K;
    header.T = data.T();
    header.J = J;
    header.config_hash = hex64(cfg.hash);
    header.chain = c + 1;
    header.seed = sc.seed;
    header.labels = data.labels;
    header.y = data.y;
    header.aggregation_rule = data.aggregation_rule;
    if (opt.resume && fs::exists(ckpt_path) && fs::exists(chain_path)) {
      resume = read_checkpoint(ckpt_path);
      std::ifstream hin(chain_path);
      std::string first;
      std::getline(hin, first);
      const auto existing = header_from_json(json::parse(first));
      if (existing.config_hash != header.config_hash || existing.seed != header.seed)
        throw ConfigError(tag + "existing chain file was produced by a different config or seed");
      truncate_chain_file(chain_path, resume->records_emitted);
      writer.emplace(ChainWriter::append(chain_path));
      rep.line(tag + "resuming at iteration " + std::to_string(resume->next_iteration));
    } else {
      writer.emplace(chain_path, header);
    }

    const std::size_t R = sc.n_iterations;
    const std::size_t report_every = std::max<std::size_t>(1, R / 20);
    PgObserver obs;
    obs.on_record = [&](const ChainRecord& r) { writer->write(r); };
    obs.on_checkpoint = [&](const PgCheckpoint& st) { write_checkpoint(ckpt_path, st); };
    obs.on_iteration = [&](std::size_t r, const ParameterSet&, double lm) {
      if (r % report_every == 0 || r == R)
        rep.line(tag + "iteration " + std::to_string(r) + "/" + std::to_string(R) +
                 " log marginal " + fmt17(lm));
      if (opt.stop_after > 0 && r == opt.stop_after) throw Interrupted("stopped after iteration " + std::to_string(r));
    };
    if (cfg.output.dump_particles) {
      obs.on_particle_system = [&](std::size_t r, const ParticleSystem& sys, const LatentPath&) {
        if (r != R) return;
        std::ofstream f(out / ("particles_" + std::to_string(c + 1) + ".csv"));
        write_particle_dump(sys, f);
      };
    }
    results[c] = run_pg(data.y, cfg.priors, sc, obs, resume);
    write_checkpoint(ckpt_path, results[c].final_state);

    const auto rates = results[c].acceptance_rates();
    std::string acc = tag + "acceptance";
    for (std::size_t s = 0; s < slots.size(); ++s) acc += " " + slots[s].name() + "=" + fmt17(rates[s]).substr(0, 6);
    rep.line(acc);
  });

  // Kappa is often weakly identified; flag chains whose posterior spread is
  // not much narrower than the prior.
  const double prior_sd = std::sqrt(cfg.priors.kappa.shape) / cfg.priors.kappa.rate;
  for (std::size_t c = 0; c < opt.chains; ++c) {
    std::vector<double> kappa;
    for (const auto& r : results[c].records) kappa.push_back(r.params.kappa);
    if (kappa.size() >= 2 && std::sqrt(sample_variance(kappa)) > 0.5 * prior_sd)
      rep.line("warning: chain " + std::to_string(c + 1) +
               ": posterior SD of kappa exceeds half its prior SD; consider a more informative prior");
  }
  rep.line("fit: wrote " + std::to_string(opt.chains) + " chain(s) to " + out.string());
  return kExitOk;
}

inline int cmd_select(const RunConfig& cfg, const std::vector<std::size_t>& Ks,
                      std::optional<std::uint64_t> seed, int jobs, const fs::path& out,
                      std::ostream& stdout_, Reporter& rep) {
  if (!cfg.data) throw ConfigError("select: the config has no data block");
  const Dataset data = load_dataset(*cfg.data);
  SamplerConfig sc = cfg.sampler;
  if (seed) sc.seed = *seed;
  sc.checkpoint_every = 0;
  rep.line("select: fitting K in {" + [&] {
    std::string s;
    for (auto k : Ks) s += (s.empty() ? "" : ",") + std::to_string(k);
    return s;
  }() + "}");
  const auto report = select_regimes(
      data.y, [&](std::size_t K) { return priors_for_k(cfg.priors, K); }, Ks, sc, jobs);
  for (const auto& r : report.rows)
    if (!r.ok()) rep.line("select: K=" + std::to_string(r.K) + " failed: " + r.error);
  fs::create_directories(out);
  std::ofstream f(out / "model_selection.csv");
  write_model_selection_csv(f, report);
  write_model_selection_csv(stdout_, report);
  bool any_ok = false;
  for (const auto& r : report.rows) any_ok = any_ok || r.ok();
  return any_ok ? kExitOk : kExitRuntime;
}

inline int cmd_diagnose(const std::vector<std::string>& files, const std::string& out_flag,
                        std::ostream& stdout_, Reporter& rep) {
  if (files.size() < 2) throw DiagnosticsError("diagnose: need at least 2 chain files");
  std::vector<std::vector<ChainRecord>> chains;
  for (const auto& f : files) chains.push_back(read_chain(f).records);
  const auto table = rhat_table(chains);
  write_rhat_csv(stdout_, table);
  if (!out_flag.empty()) {
    fs::create_directories(out_flag);
    std::ofstream f(fs::path(out_flag) / "rhat.csv");
    write_rhat_csv(f, table);
  }
  std::size_t fails = 0;
  for (const auto& e : table) fails += e.pass ? 0 : 1;
  rep.line("diagnose: " + std::to_string(table.size() - fails) + "/" + std::to_string(table.size()) +
           " parameters with R-hat < 1.2");
  return kExitOk;
}

inline int cmd_summarize(const std::vector<std::string>& files, const fs::path& out, Reporter& rep) {
  std::vector<ChainFile> kept;
  load_records(files, &kept);
  std::vector<std::vector<ChainRecord>> chains;
  for (auto& cf : kept) chains.push_back(cf.records);
  const auto summary = summarize(chains);
  fs::create_directories(out);
  {
    std::ofstream f(out / "summary.csv");
    write_summary_csv(f, summary);
  }
  {
    std::ofstream f(out / "regimes.csv");
    write_regime_csv(f, summary, kept.front().header.labels, kept.front().header.y);
  }
  {
    std::ofstream f(out / "seir.csv");
    write_seir_csv(f, summary);
  }
  rep.line("summarize: " + std::to_string(summary.n_records) + " records -> " + out.string());
  return kExitOk;
}

}  // namespace cli_detail

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Regime-switching SEIR inference by particle Gibbs"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::size_t chains = 2;
  int jobs = 1;
  std::string scenario;
  std::string k_list;
  bool resume = false;
  std::size_t stop_after = 0;
  std::vector<std::string> files;

  auto* sim = app.add_subcommand("simulate", "Generate a simulation scenario");
  sim->add_option("--scenario", scenario, "two-regime | three-regime")->required();
  sim->add_option("--seed", seed, "Random seed");
  sim->add_option("--config", config_path, "Unused; accepted for uniformity");
  sim->add_option("--out", out_dir, "Output directory");

  auto* fit = app.add_subcommand("fit", "Run particle Gibbs chains");
  fit->add_option("--config", config_path, "Run configuration (JSON)")->required();
  fit->add_option("--seed", seed, "Base seed; chain c uses seed + c");
  fit->add_option("--chains", chains, "Number of chains")->check(CLI::PositiveNumber);
  fit->add_option("--jobs", jobs, "Chains run concurrently")->check(CLI::PositiveNumber);
  fit->add_flag("--resume", resume, "Continue from the last checkpoints");
  fit->add_option("--out", out_dir, "Output directory");
  fit->add_option("--stop-after", stop_after)->group("");

  auto* sel = app.add_subcommand("select", "Compare numbers of regimes by marginal likelihood");
  sel->add_option("--config", config_path, "Run configuration (JSON)")->required();
  sel->add_option("--K", k_list, "Comma-separated candidate K values")->required();
  sel->add_option("--seed", seed, "Seed");
  sel->add_option("--jobs", jobs, "Fits run concurrently")->check(CLI::PositiveNumber);
  sel->add_option("--out", out_dir, "Output directory");

  auto* diag = app.add_subcommand("diagnose", "Gelman-Rubin R-hat over chain files");
  diag->add_option("files", files, "Chain files")->required();
  diag->add_option("--out", out_dir, "Also write rhat.csv here");

  auto* summ = app.add_subcommand("summarize", "Posterior summaries and curves from chain files");
  summ->add_option("files", files, "Chain files")->required();
  summ->add_option("--out", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  Reporter rep{err, {}};
  try {
    if (*sim) return cmd_simulate(scenario, seed.value_or(1), resolve_out(out_dir, {}), rep);
    if (*diag) return cmd_diagnose(files, out_dir, out, rep);
    if (*summ) return cmd_summarize(files, resolve_out(out_dir, {}), rep);
    const RunConfig cfg = load_config(config_path);
    const fs::path out_path = resolve_out(out_dir, cfg.output.directory);
    if (*fit) return cmd_fit(cfg, {seed, chains, jobs, resume, stop_after}, out_path, rep);
    if (*sel) return cmd_select(cfg, parse_k_list(k_list), seed, jobs, out_path, out, rep);
  } catch (const Interrupted& e) {
    rep.line(std::string("interrupted: ") + e.what());
    return kExitRuntime;
  } catch (const std::invalid_argument& e) {
    rep.line(std::string("error: ") + e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    rep.line(std::string("error: ") + e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace bdseir
