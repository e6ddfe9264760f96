#pragma once

// Particle Gibbs: CSMC-AS updates of the latent path alternating with
// Metropolis-Hastings sweeps over the parameters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bdseir/model.hpp"
#include "bdseir/rng.hpp"
#include "bdseir/smc_engine.hpp"
#include "bdseir/stats_dist.hpp"

namespace bdseir {

class SamplerError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Parameter slots

enum class ParamKind { Alpha, Beta, Gamma, Lambda, Kappa, Ident, Modifier, TransRow };

/// One MH-updated block. `index` is the 0-based identification-rate index,
/// regime (modifiers) or row.
struct ParamSlot {
  ParamKind kind = ParamKind::Alpha;
  std::size_t index = 0;

  std::string name() const {
    switch (kind) {
      case ParamKind::Alpha: return "alpha";
      case ParamKind::Beta: return "beta";
      case ParamKind::Gamma: return "gamma";
      case ParamKind::Lambda: return "lambda";
      case ParamKind::Kappa: return "kappa";
      case ParamKind::Ident: return "p_" + std::to_string(index + 1);
      case ParamKind::Modifier: return "f_" + std::to_string(index + 1);
      case ParamKind::TransRow: return "pi_row_" + std::to_string(index + 1);
    }
    return "?";
  }

  friend bool operator==(const ParamSlot&, const ParamSlot&) = default;
};

/// Slots in sweep order: alpha, beta, gamma, lambda, kappa, p_1..p_J,
/// f_2..f_K, then the K transition rows (one of which is updated per sweep).
inline std::vector<ParamSlot> parameter_slots(std::size_t K, std::size_t J) {
  std::vector<ParamSlot> s{{ParamKind::Alpha, 0}, {ParamKind::Beta, 0}, {ParamKind::Gamma, 0},
                           {ParamKind::Lambda, 0}, {ParamKind::Kappa, 0}};
  for (std::size_t j = 0; j < J; ++j) s.push_back({ParamKind::Ident, j});
  for (std::size_t k = 1; k < K; ++k) s.push_back({ParamKind::Modifier, k});
  if (K >= 2)
    for (std::size_t k = 0; k < K; ++k) s.push_back({ParamKind::TransRow, k});
  return s;
}

inline double default_step_size(ParamKind kind) {
  switch (kind) {
    case ParamKind::Alpha:
    case ParamKind::Beta:
    case ParamKind::Gamma: return 0.02;
    case ParamKind::Lambda: return 200.0;
    case ParamKind::Kappa: return 500.0;
    case ParamKind::Ident: return 0.01;
    case ParamKind::Modifier: return 0.05;
    case ParamKind::TransRow: return 0.05;
  }
  return 0.05;
}

/// Proposal standard deviations aligned with parameter_slots(K, J).
struct StepSizes {
  std::vector<ParamSlot> slots;
  std::vector<double> values;

  static StepSizes defaults(std::size_t K, std::size_t J) {
    StepSizes s;
    s.slots = parameter_slots(K, J);
    for (const auto& slot : s.slots) s.values.push_back(default_step_size(slot.kind));
    return s;
  }

  std::size_t size() const noexcept { return slots.size(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].name() == name) return i;
    return std::nullopt;
  }

  double& operator[](const std::string& name) {
    const auto i = find(name);
    if (!i) throw std::invalid_argument("unknown step-size parameter '" + name + "'");
    return values[*i];
  }

  void validate() const {
    if (values.size() != slots.size()) throw std::invalid_argument("step sizes misaligned");
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!(values[i] > 0.0) || !std::isfinite(values[i]))
        throw std::invalid_argument("step size for " + slots[i].name() + " must be positive");
  }

  friend bool operator==(const StepSizes&, const StepSizes&) = default;
};

// ---------------------------------------------------------------------------
// Configuration and records

struct SamplerConfig {
  std::size_t n_iterations = 4000;  // R, including burn-in
  std::size_t burn_in = 1000;
  std::size_t m_per_regime = 50;
  std::size_t mh_sweeps = 5;
  std::size_t thin = 1;
  std::uint64_t seed = 1;
  std::optional<StepSizes> step_sizes;
  bool tune = true;
  double target_accept = 0.35;
  std::size_t tune_min_proposals = 200;
  std::size_t checkpoint_every = 0;
  bool keep_records = true;
  // Test hooks.
  bool update_parameters = true;
  std::optional<ParameterSet> initial_params;
  LikelihoodMask mask;
  EngineOptions engine;

  void validate() const {
    if (!(n_iterations > burn_in)) throw std::invalid_argument("n_iterations must exceed burn_in");
    if (m_per_regime < 2) throw std::invalid_argument("m_per_regime must be >= 2");
    if (mh_sweeps < 1) throw std::invalid_argument("mh_sweeps must be >= 1");
    if (thin < 1) throw std::invalid_argument("thin must be >= 1");
    if (!(target_accept > 0.1 && target_accept < 0.6))
      throw std::invalid_argument("target acceptance rate must lie in (0.1, 0.6)");
    if (step_sizes) step_sizes->validate();
  }
};

/// Retained state of one PG iteration.
struct ChainRecord {
  std::size_t iteration = 0;
  ParameterSet params;
  LatentPath path;
  double log_marginal = 0.0;
  // Per slot (parameter_slots order): accepted and attempted MH moves in
  // this iteration.
  std::vector<std::uint32_t> accepts;
  std::vector<std::uint32_t> proposals;

  friend bool operator==(const ChainRecord&, const ChainRecord&) = default;
};

// ---------------------------------------------------------------------------
// Metropolis-Hastings

struct MhResult {
  ParameterSet params;
  bool accepted = false;
  std::size_t row = 0;  // row chosen by mh_update_trans_row
};

/// Support (lower, upper) of a scalar slot; the truncated-Normal proposal
/// uses the same bounds.
inline std::pair<double, double> slot_support(const ParamSlot& slot, const PriorSpec& priors) {
  switch (slot.kind) {
    case ParamKind::Ident: return {priors.ident[slot.index].prior.lower, priors.ident[slot.index].prior.upper};
    case ParamKind::Modifier: return modifier_band(priors.regimes(), slot.index);
    case ParamKind::TransRow: return {0.0, 1.0};
    default: return {0.0, kInf};
  }
}

inline double& slot_value(ParameterSet& p, const ParamSlot& slot) {
  switch (slot.kind) {
    case ParamKind::Alpha: return p.alpha;
    case ParamKind::Beta: return p.beta;
    case ParamKind::Gamma: return p.gamma;
    case ParamKind::Lambda: return p.lambda;
    case ParamKind::Kappa: return p.kappa;
    case ParamKind::Ident: return p.ident[slot.index].rate;
    case ParamKind::Modifier: return p.modifiers[slot.index];
    case ParamKind::TransRow: break;
  }
  throw std::invalid_argument("slot_value: transition rows are not scalar");
}

/// Posterior terms that change when `slot` moves, plus the full prior.
inline double slot_log_target(const ParamSlot& slot, const ParameterSet& p, const LatentPath& path,
                              std::span<const double> y, const PriorSpec& priors,
                              const LikelihoodMask& mask) {
  double acc = log_prior(p, priors);
  if (acc == kNegInf) return kNegInf;
  switch (slot.kind) {
    case ParamKind::Lambda:
    case ParamKind::Ident:
      if (mask.obs) acc += obs_term(path, y, p);
      break;
    case ParamKind::TransRow:
      if (mask.regime) acc += regime_term(path, p);
      break;
    default:
      if (mask.trans) acc += trans_term(path, p);
      break;
  }
  return std::isnan(acc) ? kNegInf : acc;
}

/// One truncated-Normal random-walk MH step on a scalar with support
/// (lower, upper), including the Hastings correction for the truncation.
template <class LogTarget, UniformSource G>
std::pair<double, bool> mh_truncnormal_step(double current, double lower, double upper,
                                            double step, LogTarget&& log_target, G& rng) {
  const double proposal = sample_trunc_normal({current, step, lower, upper}, rng);
  const double log_u = std::log(rng.uniform());
  const double q_forward = trunc_normal_logpdf(proposal, {current, step, lower, upper});
  const double q_reverse = trunc_normal_logpdf(current, {proposal, step, lower, upper});
  if (q_forward == kNegInf || q_reverse == kNegInf) return {current, false};
  const double target_prop = log_target(proposal);
  if (target_prop == kNegInf) return {current, false};
  const double log_ratio = (target_prop + q_reverse) - (log_target(current) + q_forward);
  if (log_u < log_ratio) return {proposal, true};
  return {current, false};
}

template <UniformSource G>
MhResult mh_update_scalar(const ParameterSet& current, const ParamSlot& which,
                          const LatentPath& path, std::span<const double> y,
                          const PriorSpec& priors, double step, G& rng,
                          const LikelihoodMask& mask = {}) {
  if (which.kind == ParamKind::TransRow)
    throw std::invalid_argument("mh_update_scalar: use mh_update_trans_row for rows");
  const auto [lower, upper] = slot_support(which, priors);
  ParameterSet work = current;
  auto target = [&](double v) {
    slot_value(work, which) = v;
    return slot_log_target(which, work, path, y, priors, mask);
  };
  const auto [value, accepted] =
      mh_truncnormal_step(slot_value(work, which), lower, upper, step, target, rng);
  MhResult out{current, accepted, 0};
  slot_value(out.params, which) = value;
  return out;
}

/// Row update: pick row k uniformly, propose its first K-1 entries from
/// truncated Normals whose upper bounds keep the partial sum below 1, and
/// set the last entry to the remainder.
template <UniformSource G>
MhResult mh_update_trans_row(const ParameterSet& current, const LatentPath& path,
                             std::span<const double> y, const PriorSpec& priors,
                             std::span<const double> row_steps, G& rng,
                             const LikelihoodMask& mask = {}) {
  const std::size_t K = current.regimes();
  if (K < 2) throw std::invalid_argument("mh_update_trans_row: needs K >= 2");
  if (row_steps.size() != K) throw std::invalid_argument("mh_update_trans_row: need K step sizes");
  const auto k = static_cast<std::size_t>(std::ceil(rng.uniform() * static_cast<double>(K))) - 1;
  const double step = row_steps[k];
  const auto cur = current.trans.row(k);

  ParameterSet prop = current;
  auto row = prop.trans.row(k);
  double log_q_forward = 0.0;
  double log_q_reverse = 0.0;
  double prop_partial = 0.0;
  double cur_partial = 0.0;
  for (std::size_t j = 0; j + 1 < K; ++j) {
    const double upper_fwd = 1.0 - prop_partial;
    row[j] = sample_trunc_normal({cur[j], step, 0.0, upper_fwd}, rng);
    log_q_forward += trunc_normal_logpdf(row[j], {cur[j], step, 0.0, upper_fwd});
    log_q_reverse += trunc_normal_logpdf(cur[j], {row[j], step, 0.0, 1.0 - cur_partial});
    prop_partial += row[j];
    cur_partial += cur[j];
  }
  const double log_u = std::log(rng.uniform());
  row[K - 1] = 1.0 - prop_partial;
  if (!(row[K - 1] > 0.0)) return {current, false, k};
  if (log_q_forward == kNegInf || log_q_reverse == kNegInf) return {current, false, k};

  const ParamSlot slot{ParamKind::TransRow, k};
  const double target_prop = slot_log_target(slot, prop, path, y, priors, mask);
  if (target_prop == kNegInf) return {current, false, k};
  const double target_cur = slot_log_target(slot, current, path, y, priors, mask);
  const double log_ratio = (target_prop + log_q_reverse) - (target_cur + log_q_forward);
  if (log_u < log_ratio) return {std::move(prop), true, k};
  return {current, false, k};
}

// ---------------------------------------------------------------------------
// Step-size tuning

/// Multiplicative update s * Phi^-1(target/2) / Phi^-1(rate/2). The factor
/// is 1 at rate == target, below 1 for lower rates and above 1 for higher.
inline double adjust_step_size(double step, double rate, double target) {
  const double r = std::clamp(rate, 0.01, 0.99);
  const double factor = normal_quantile(0.5 * target) / normal_quantile(0.5 * r);
  return step * std::clamp(factor, 0.1, 10.0);
}

inline double max_step_size(const ParamSlot& slot, const PriorSpec& priors) {
  const auto [lo, hi] = slot_support(slot, priors);
  return std::isfinite(hi) ? (hi - lo) : kInf;
}

/// Step sizes adjusted from the acceptance rates observed in a pilot run.
inline StepSizes tune_step_sizes(std::span<const ChainRecord> pilot, const StepSizes& current,
                                 double target_rate) {
  if (pilot.size() < 200) throw std::invalid_argument("tune_step_sizes: pilot needs >= 200 records");
  if (!(target_rate > 0.1 && target_rate < 0.6))
    throw std::invalid_argument("tune_step_sizes: target must lie in (0.1, 0.6)");
  StepSizes out = current;
  for (std::size_t s = 0; s < current.size(); ++s) {
    double acc = 0.0;
    double n = 0.0;
    for (const auto& rec : pilot) {
      if (s < rec.accepts.size()) acc += rec.accepts[s];
      if (s < rec.proposals.size()) n += rec.proposals[s];
    }
    if (n > 0.0) out.values[s] = adjust_step_size(current.values[s], acc / n, target_rate);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampler state and driver

/// Everything needed to continue a chain exactly where it stopped. Random
/// streams are addressed by (seed, iteration), so no generator state is kept.
struct PgCheckpoint {
  std::uint64_t seed = 0;
  std::size_t next_iteration = 1;
  std::size_t records_emitted = 0;
  std::size_t degenerate_iterations = 0;
  ParameterSet params;
  LatentPath reference;
  StepSizes steps;
  std::vector<std::uint64_t> tune_accepts;
  std::vector<std::uint64_t> tune_proposals;
  std::vector<std::uint64_t> total_accepts;  // post burn-in
  std::vector<std::uint64_t> total_proposals;

  friend bool operator==(const PgCheckpoint&, const PgCheckpoint&) = default;
};

struct PgObserver {
  std::function<void(const ChainRecord&)> on_record;
  std::function<void(const PgCheckpoint&)> on_checkpoint;
  // Called after each CSMC-AS sweep with the reference it was conditioned on.
  std::function<void(std::size_t iteration, const ParticleSystem&, const LatentPath&)>
      on_particle_system;
  std::function<void(std::size_t iteration, const ParameterSet&, double log_marginal)>
      on_iteration;
};

struct PgResult {
  std::vector<ChainRecord> records;
  PgCheckpoint final_state;

  /// Post-burn-in acceptance rate per slot.
  std::vector<double> acceptance_rates() const {
    std::vector<double> r(final_state.total_accepts.size(), 0.0);
    for (std::size_t s = 0; s < r.size(); ++s)
      if (final_state.total_proposals[s] > 0)
        r[s] = static_cast<double>(final_state.total_accepts[s]) /
               static_cast<double>(final_state.total_proposals[s]);
    return r;
  }
};

inline constexpr std::size_t kDegeneracyWindow = 100;
inline constexpr std::size_t kDegeneracyLimit = 50;

namespace detail {

inline void check_pg_inputs(std::span<const double> y, const PriorSpec& priors,
                            const SamplerConfig& config) {
  if (y.size() < 2) throw std::invalid_argument("run_pg: need at least 2 observations");
  for (double v : y)
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("run_pg: observations must lie in (0,1)");
  priors.validate();
  config.validate();
  if (config.initial_params) {
    config.initial_params->validate();
    if (config.initial_params->regimes() != priors.regimes())
      throw std::invalid_argument("run_pg: initial parameters disagree with the priors on K");
  }
  if (config.step_sizes &&
      config.step_sizes->slots != parameter_slots(priors.regimes(), priors.ident.size()))
    throw std::invalid_argument("run_pg: step sizes do not match the model dimensions");
}

/// One MH sweep over all slots. Returns the updated parameters and bumps the
/// per-slot counters.
inline ParameterSet mh_sweep(ParameterSet params, const LatentPath& path,
                             std::span<const double> y, const PriorSpec& priors,
                             const StepSizes& steps, const LikelihoodMask& mask,
                             const StreamFactory& streams, std::uint32_t sweep,
                             std::vector<std::uint32_t>& accepts,
                             std::vector<std::uint32_t>& proposals) {
  const std::size_t K = params.regimes();
  std::size_t row_base = steps.size();
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const auto& slot = steps.slots[s];
    if (slot.kind == ParamKind::TransRow) {
      row_base = std::min(row_base, s);
      continue;
    }
    auto rng = streams.stream(StreamPurpose::Metropolis, sweep, static_cast<std::uint32_t>(s));
    auto res = mh_update_scalar(params, slot, path, y, priors, steps.values[s], rng, mask);
    ++proposals[s];
    if (res.accepted) {
      ++accepts[s];
      params = std::move(res.params);
    }
  }
  if (K >= 2) {
    auto rng = streams.stream(StreamPurpose::Metropolis, sweep,
                              static_cast<std::uint32_t>(steps.size()));
    const std::span<const double> row_steps(steps.values.data() + row_base, K);
    auto res = mh_update_trans_row(params, path, y, priors, row_steps, rng, mask);
    ++proposals[row_base + res.row];
    if (res.accepted) {
      ++accepts[row_base + res.row];
      params = std::move(res.params);
    }
  }
  return params;
}

}  // namespace detail

/// Runs (or resumes) one particle Gibbs chain.
///
/// Iteration 0 draws psi from the priors (or takes config.initial_params) and
/// builds the first reference with plain SMC. Iterations 1..R each run
/// CSMC-AS given the previous reference, draw a new reference, then apply
/// config.mh_sweeps MH sweeps. Records are emitted for iterations past
/// burn-in, every `thin`-th one.
inline PgResult run_pg(std::span<const double> y, const PriorSpec& priors,
                       const SamplerConfig& config, const PgObserver& observer = {},
                       const std::optional<PgCheckpoint>& resume = std::nullopt) {
  detail::check_pg_inputs(y, priors, config);
  const std::size_t K = priors.regimes();
  const std::size_t J = priors.ident.size();
  const auto root = StreamFactory::from_seed(config.seed);
  const std::size_t R = config.n_iterations;

  PgCheckpoint st;
  if (resume) {
    st = *resume;
    if (st.seed != config.seed) throw SamplerError("checkpoint seed does not match the config");
    if (st.params.regimes() != K || st.reference.size() != y.size())
      throw SamplerError("checkpoint dimensions do not match the data/config");
    if (st.steps.slots != parameter_slots(K, J))
      throw SamplerError("checkpoint step sizes do not match the model dimensions");
  } else {
    st.seed = config.seed;
    st.steps = config.step_sizes ? *config.step_sizes : StepSizes::defaults(K, J);
    const std::size_t S = st.steps.size();
    st.tune_accepts.assign(S, 0);
    st.tune_proposals.assign(S, 0);
    st.total_accepts.assign(S, 0);
    st.total_proposals.assign(S, 0);

    // Iteration 0: psi from the priors, reference from plain SMC.
    const auto init = root.at_iteration(0);
    for (std::uint32_t attempt = 0;; ++attempt) {
      if (config.initial_params) {
        st.params = *config.initial_params;
      } else {
        auto rng = init.stream(StreamPurpose::ParameterInit, 0, attempt);
        st.params = sample_parameters(priors, rng);
      }
      try {
        const auto sys = run_smc(y, st.params, priors, K * config.m_per_regime,
                                 StreamFactory{mix64(init.key ^ attempt), 0}, config.engine);
        auto rng = init.stream(StreamPurpose::Reference, 0, attempt);
        st.reference = sample_reference(sys, rng).path;
        break;
      } catch (const DegenerateWeightsError& e) {
        if (++st.degenerate_iterations > kDegeneracyLimit)
          throw SamplerError(std::string("initialization failed repeatedly: ") + e.what() +
                             "; check the priors and precision parameters");
      }
    }
    st.next_iteration = 1;
  }

  PgResult result;
  const std::size_t S = st.steps.size();
  std::vector<std::uint32_t> accepts(S), proposals(S);
  for (std::size_t r = st.next_iteration; r <= R; ++r) {
    const auto streams = root.at_iteration(static_cast<std::uint32_t>(r));
    double log_marginal = kNegInf;
    try {
      const ReferenceTrajectory ref{st.reference, {}};
      const auto sys =
          run_csmc_as(y, st.params, priors, ref, config.m_per_regime, streams, config.engine);
      if (observer.on_particle_system) observer.on_particle_system(r, sys, st.reference);
      log_marginal = sys.log_marginal;
      auto rng = streams.stream(StreamPurpose::Reference);
      st.reference = sample_reference(sys, rng).path;
    } catch (const DegenerateWeightsError& e) {
      if (r > kDegeneracyWindow)
        throw SamplerError("iteration " + std::to_string(r) + ": " + e.what());
      if (++st.degenerate_iterations > kDegeneracyLimit)
        throw SamplerError("more than " + std::to_string(kDegeneracyLimit) + " of the first " +
                           std::to_string(kDegeneracyWindow) +
                           " iterations had degenerate weights (last at iteration " +
                           std::to_string(r) + "); check the priors and precision parameters");
    }

    std::fill(accepts.begin(), accepts.end(), 0u);
    std::fill(proposals.begin(), proposals.end(), 0u);
    if (config.update_parameters) {
      for (std::size_t sweep = 0; sweep < config.mh_sweeps; ++sweep)
        st.params = detail::mh_sweep(std::move(st.params), st.reference, y, priors, st.steps,
                                     config.mask, streams, static_cast<std::uint32_t>(sweep),
                                     accepts, proposals);
    }

    if (r <= config.burn_in) {
      if (config.tune) {
        for (std::size_t s = 0; s < S; ++s) {
          st.tune_accepts[s] += accepts[s];
          st.tune_proposals[s] += proposals[s];
          if (st.tune_proposals[s] >= config.tune_min_proposals) {
            const double rate = static_cast<double>(st.tune_accepts[s]) /
                                static_cast<double>(st.tune_proposals[s]);
            st.steps.values[s] = std::min(
                adjust_step_size(st.steps.values[s], rate, config.target_accept),
                max_step_size(st.steps.slots[s], priors));
            st.tune_accepts[s] = 0;
            st.tune_proposals[s] = 0;
          }
        }
      }
    } else {
      for (std::size_t s = 0; s < S; ++s) {
        st.total_accepts[s] += accepts[s];
        st.total_proposals[s] += proposals[s];
      }
    }

    if (observer.on_iteration) observer.on_iteration(r, st.params, log_marginal);

    if (r > config.burn_in && (r - config.burn_in - 1) % config.thin == 0) {
      ChainRecord rec{r, st.params, st.reference, log_marginal, accepts, proposals};
      ++st.records_emitted;
      if (observer.on_record) observer.on_record(rec);
      if (config.keep_records) result.records.push_back(std::move(rec));
    }

    st.next_iteration = r + 1;
    if (config.checkpoint_every > 0 && r % config.checkpoint_every == 0 && observer.on_checkpoint)
      observer.on_checkpoint(st);
  }
  result.final_state = std::move(st);
  return result;
}

}  // namespace bdseir
