#pragma once

// Posterior summaries, regime curves, Gelman-Rubin and model selection
// over the number of regimes.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bdseir/model.hpp"
#include "bdseir/parallel.hpp"
#include "bdseir/pg_sampler.hpp"

namespace bdseir {

class DiagnosticsError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Quantile by linear interpolation between order statistics (type 7).
/// `sorted` must be ascending and non-empty.
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw DiagnosticsError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double sample_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Sample variance with n - 1 denominator; 0 for a single value.
inline double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

struct ScalarSummary {
  std::string name;
  double mean = 0.0;
  double median = 0.0;
  double sd = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;

  bool covers(double v) const noexcept { return ci_lo <= v && v <= ci_hi; }
};

inline ScalarSummary summarize_draws(std::string name, std::vector<double> draws) {
  if (draws.empty()) throw DiagnosticsError("no draws for " + name);
  ScalarSummary s;
  s.name = std::move(name);
  s.mean = sample_mean(draws);
  s.sd = std::sqrt(sample_variance(draws));
  std::sort(draws.begin(), draws.end());
  s.median = quantile_sorted(draws, 0.5);
  s.ci_lo = quantile_sorted(draws, 0.025);
  s.ci_hi = quantile_sorted(draws, 0.975);
  return s;
}

struct Band {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Named scalar view of a parameter set: alpha, beta, gamma, lambda, kappa,
/// p_j, f_k (k >= 2), pi_ij (K >= 2), R0.
inline std::vector<std::pair<std::string, double>> named_values(const ParameterSet& p) {
  std::vector<std::pair<std::string, double>> v{
      {"alpha", p.alpha}, {"beta", p.beta}, {"gamma", p.gamma}, {"lambda", p.lambda}, {"kappa", p.kappa}};
  for (std::size_t j = 0; j < p.ident.size(); ++j)
    v.emplace_back("p_" + std::to_string(j + 1), p.ident[j].rate);
  const std::size_t K = p.regimes();
  for (std::size_t k = 1; k < K; ++k) v.emplace_back("f_" + std::to_string(k + 1), p.modifiers[k]);
  if (K >= 2)
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j)
        v.emplace_back("pi_" + std::to_string(i + 1) + std::to_string(j + 1), p.trans(i, j));
  v.emplace_back("R0", p.basic_reproduction_number());
  return v;
}

struct PosteriorSummary {
  std::size_t n_records = 0;
  std::size_t K = 0;
  std::size_t T = 0;
  std::vector<ScalarSummary> parameters;          // named_values order, R0 last
  std::vector<std::vector<double>> regime_probs;  // T x K
  std::vector<std::array<Band, 4>> seir;          // T
  std::vector<Band> expected_y;                   // E(y_t | theta_t, psi) = p_t I_t

  const ScalarSummary& at(const std::string& name) const {
    for (const auto& s : parameters)
      if (s.name == name) return s;
    throw DiagnosticsError("no summary for parameter '" + name + "'");
  }

  /// 0-based argmax_k P(X_t = k | y) for every t.
  std::vector<int> classify_regimes() const {
    std::vector<int> out(T);
    for (std::size_t t = 0; t < T; ++t)
      out[t] = static_cast<int>(std::max_element(regime_probs[t].begin(), regime_probs[t].end()) -
                                regime_probs[t].begin());
    return out;
  }
};

/// Pools the records of every chain (already post burn-in) into posterior
/// summaries.
inline PosteriorSummary summarize(std::span<const std::vector<ChainRecord>> chains) {
  std::vector<const ChainRecord*> pool;
  for (const auto& c : chains)
    for (const auto& r : c) pool.push_back(&r);
  if (pool.empty()) throw DiagnosticsError("summarize: no chain records");

  PosteriorSummary out;
  out.n_records = pool.size();
  out.K = pool.front()->params.regimes();
  out.T = pool.front()->path.size();
  for (const auto* r : pool)
    if (r->params.regimes() != out.K || r->path.size() != out.T)
      throw DiagnosticsError("summarize: records disagree on K or T");

  const auto names = named_values(pool.front()->params);
  std::vector<std::vector<double>> draws(names.size());
  for (const auto* r : pool) {
    const auto vals = named_values(r->params);
    for (std::size_t k = 0; k < vals.size(); ++k) draws[k].push_back(vals[k].second);
  }
  for (std::size_t k = 0; k < names.size(); ++k)
    out.parameters.push_back(summarize_draws(names[k].first, std::move(draws[k])));

  const double n = static_cast<double>(pool.size());
  out.regime_probs.assign(out.T, std::vector<double>(out.K, 0.0));
  out.seir.resize(out.T);
  out.expected_y.resize(out.T);
  std::vector<double> buf(pool.size());
  for (std::size_t t = 0; t < out.T; ++t) {
    for (const auto* r : pool) out.regime_probs[t][static_cast<std::size_t>(r->path.regimes[t])] += 1.0;
    for (auto& v : out.regime_probs[t]) v /= n;
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t i = 0; i < pool.size(); ++i) buf[i] = pool[i]->path.thetas[t][c];
      const auto s = summarize_draws("", buf);
      out.seir[t][c] = {s.mean, s.ci_lo, s.ci_hi};
    }
    for (std::size_t i = 0; i < pool.size(); ++i)
      buf[i] = pool[i]->params.ident_rate_at(t) * pool[i]->path.thetas[t].i();
    const auto s = summarize_draws("", buf);
    out.expected_y[t] = {s.mean, s.ci_lo, s.ci_hi};
  }
  return out;
}

/// Potential scale reduction factor for m >= 2 equal-length chains.
inline double gelman_rubin(std::span<const std::vector<double>> chains) {
  if (chains.size() < 2) throw DiagnosticsError("gelman_rubin: need at least 2 chains");
  const std::size_t n = chains.front().size();
  if (n < 10) throw DiagnosticsError("gelman_rubin: need at least 10 draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw DiagnosticsError("gelman_rubin: chains differ in length");
  std::vector<double> means;
  double W = 0.0;
  for (const auto& c : chains) {
    means.push_back(sample_mean(c));
    W += sample_variance(c);
  }
  W /= static_cast<double>(chains.size());
  if (!(W > 0.0)) throw DiagnosticsError("gelman_rubin: zero within-chain variance");
  const double nd = static_cast<double>(n);
  const double B = nd * sample_variance(means);
  return std::sqrt(((nd - 1.0) / nd * W + B / nd) / W);
}

struct RhatEntry {
  std::string name;
  double rhat = 0.0;
  bool pass = false;
};

inline constexpr double kRhatThreshold = 1.2;

/// R-hat for every named parameter. Chains are cut to the shortest length.
/// Parameters with no within-chain variation are reported with rhat = NaN
/// and fail.
inline std::vector<RhatEntry> rhat_table(std::span<const std::vector<ChainRecord>> chains) {
  if (chains.size() < 2) throw DiagnosticsError("diagnose: need at least 2 chains");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 10) throw DiagnosticsError("diagnose: need at least 10 records per chain");
  const auto names = named_values(chains.front().front().params);
  std::vector<RhatEntry> out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<std::vector<double>> series(chains.size());
    for (std::size_t c = 0; c < chains.size(); ++c)
      for (std::size_t i = 0; i < n; ++i) series[c].push_back(named_values(chains[c][i].params)[k].second);
    RhatEntry e{names[k].first, std::nan(""), false};
    try {
      e.rhat = gelman_rubin(series);
      e.pass = e.rhat < kRhatThreshold;
    } catch (const DiagnosticsError&) {
    }
    out.push_back(e);
  }
  return out;
}

struct ModelSelectionRow {
  std::size_t K = 0;
  double log_ml_mean = 0.0;
  double log_ml_sd = 0.0;  // across retained iterations
  std::size_t n = 0;
  std::string error;       // non-empty when the fit for this K failed

  bool ok() const noexcept { return error.empty(); }
};

struct ModelSelectionReport {
  std::vector<ModelSelectionRow> rows;  // successful fits by descending score, failures last

  const ModelSelectionRow& at(std::size_t K) const {
    for (const auto& r : rows)
      if (r.K == K) return r;
    throw DiagnosticsError("no model-selection row for K=" + std::to_string(K));
  }
};

/// Mean and SD of per-iteration log marginal likelihoods (mean of logs).
inline ModelSelectionRow score_log_marginals(std::size_t K, std::span<const ChainRecord> records) {
  std::vector<double> lm;
  for (const auto& r : records)
    if (std::isfinite(r.log_marginal)) lm.push_back(r.log_marginal);
  if (lm.empty()) return {K, 0.0, 0.0, 0, "no finite log marginal likelihoods"};
  return {K, sample_mean(lm), std::sqrt(sample_variance(lm)), lm.size(), {}};
}

/// Fits each candidate K and ranks them by mean log marginal likelihood.
/// `priors_for` supplies the complete prior for a given K. A failure for one
/// K is recorded in its row and does not stop the others.
inline ModelSelectionReport select_regimes(std::span<const double> y,
                                           const std::function<PriorSpec(std::size_t)>& priors_for,
                                           std::span<const std::size_t> candidate_Ks,
                                           const SamplerConfig& config, int jobs = 1) {
  ModelSelectionReport rep;
  rep.rows.resize(candidate_Ks.size());
  parallel_for_tasks(candidate_Ks.size(), jobs, [&](std::size_t i) {
    const std::size_t K = candidate_Ks[i];
    try {
      const PriorSpec priors = priors_for(K);
      if (priors.regimes() != K) throw DiagnosticsError("prior for K=" + std::to_string(K) + " has wrong size");
      const auto res = run_pg(y, priors, config);
      rep.rows[i] = score_log_marginals(K, res.records);
    } catch (const std::exception& e) {
      rep.rows[i] = {K, 0.0, 0.0, 0, e.what()};
    }
  });
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const auto& a, const auto& b) {
    if (a.ok() != b.ok()) return a.ok();
    return a.log_ml_mean > b.log_ml_mean;
  });
  return rep;
}

}  // namespace bdseir
