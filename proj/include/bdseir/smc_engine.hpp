#pragma once

// Particle machinery: bootstrap SMC, partially deterministic conditional SMC
// with ancestor sampling, reference-trajectory extraction and the
// marginal-likelihood estimator.
//
// Every random draw comes from a stream addressed by (iteration, purpose,
// time, particle), so results are identical for any number of threads.

#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bdseir/model.hpp"
#include "bdseir/rng.hpp"

namespace bdseir {

class DegenerateWeightsError : public std::runtime_error {
public:
  explicit DegenerateWeightsError(std::size_t t)
      : std::runtime_error("all particle weights underflowed at t=" + std::to_string(t + 1)),
        time_(t) {}
  /// 0-based time index of the failing step.
  std::size_t time() const noexcept { return time_; }

private:
  std::size_t time_;
};

struct EngineOptions {
  // Test-only: theta_t is set to the propagated mean instead of a Dirichlet
  // draw. Makes the likelihood exactly computable by path enumeration.
  bool deterministic_transition = false;
  // Test-only: every particle starts from this state instead of a prior draw.
  std::optional<SeirState> fixed_initial_theta;
  // Worker threads for particle loops (OpenMP builds only).
  int threads = 1;
};

/// Particles, weights and ancestry for t = 1..T, stored time-major.
struct ParticleSystem {
  std::size_t T = 0;
  std::size_t N = 0;
  std::size_t K = 0;
  std::size_t M = 0;  // particles per regime; 0 for plain SMC
  std::vector<SeirState> thetas;
  std::vector<int> regimes;
  std::vector<double> log_weights;
  std::vector<double> norm_weights;
  std::vector<int> ancestors;        // entry (t-1)*N + i: parent of particle i at t
  std::vector<double> log_increments;  // log((1/N) sum_i w_t^(i))
  std::vector<int> reference_slots;    // CSMC only
  double log_marginal = 0.0;

  void allocate(std::size_t t_len, std::size_t n, std::size_t k, std::size_t m) {
    T = t_len;
    N = n;
    K = k;
    M = m;
    thetas.assign(T * N, SeirState{});
    regimes.assign(T * N, 0);
    log_weights.assign(T * N, 0.0);
    norm_weights.assign(T * N, 0.0);
    ancestors.assign(T > 0 ? (T - 1) * N : 0, 0);
    log_increments.assign(T, 0.0);
    reference_slots.clear();
    log_marginal = 0.0;
  }

  SeirState& theta(std::size_t t, std::size_t i) { return thetas[t * N + i]; }
  const SeirState& theta(std::size_t t, std::size_t i) const { return thetas[t * N + i]; }
  int& regime(std::size_t t, std::size_t i) { return regimes[t * N + i]; }
  int regime(std::size_t t, std::size_t i) const { return regimes[t * N + i]; }
  double& log_weight(std::size_t t, std::size_t i) { return log_weights[t * N + i]; }
  double log_weight(std::size_t t, std::size_t i) const { return log_weights[t * N + i]; }
  double weight(std::size_t t, std::size_t i) const { return norm_weights[t * N + i]; }
  /// Parent index at t-1 of particle i at t, for t >= 1.
  int& ancestor(std::size_t t, std::size_t i) { return ancestors[(t - 1) * N + i]; }
  int ancestor(std::size_t t, std::size_t i) const { return ancestors[(t - 1) * N + i]; }

  std::span<const double> log_weight_row(std::size_t t) const {
    return {log_weights.data() + t * N, N};
  }
  std::span<const double> weight_row(std::size_t t) const {
    return {norm_weights.data() + t * N, N};
  }
};

struct ReferenceTrajectory {
  LatentPath path;
  std::vector<int> lineage;  // B_{1:T}, 0-based particle indices
};

namespace detail {

/// Runs fn(i) for i in [0, n), optionally across OpenMP threads. The first
/// exception thrown by any iteration is rethrown on the calling thread.
template <class Fn>
void for_each_particle(std::size_t n, int threads, Fn&& fn) {
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<long>(n);
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  (void)threads;
  if (error) std::rethrow_exception(error);
}

/// Normalizes row t in log space and accumulates the likelihood increment.
inline void normalize_step(ParticleSystem& sys, std::size_t t) {
  const double lse = log_sum_exp(sys.log_weight_row(t));
  if (lse == kNegInf || std::isnan(lse)) throw DegenerateWeightsError(t);
  for (std::size_t i = 0; i < sys.N; ++i)
    sys.norm_weights[t * sys.N + i] = std::exp(sys.log_weight(t, i) - lse);
  sys.log_increments[t] = lse - std::log(static_cast<double>(sys.N));
  sys.log_marginal += sys.log_increments[t];
}

inline SeirState draw_transition(const SeirState& prev, std::size_t regime,
                                 const ParameterSet& params, const EngineOptions& opts,
                                 RandomStream& rng) {
  const SeirState mean = rk4_step(prev, params.rates_for(regime), params.rk4_substeps);
  if (opts.deterministic_transition) return mean;
  std::array<double, 4> conc{};
  for (int k = 0; k < 4; ++k) conc[k] = params.kappa * mean[k];
  SeirState out;
  sample_dirichlet(std::span<const double>(conc), out.span(), rng);
  return out;
}

inline SeirState draw_initial(const PriorSpec& priors, const EngineOptions& opts,
                              RandomStream& rng) {
  if (opts.fixed_initial_theta) return *opts.fixed_initial_theta;
  SeirState theta;
  sample_dirichlet(std::span<const double>(priors.theta1.concentration), theta.span(), rng);
  return theta;
}

inline void check_inputs(std::span<const double> y, const ParameterSet& params,
                         const PriorSpec& priors) {
  if (y.empty()) throw ModelError("observation series is empty");
  if (params.regimes() != priors.regimes())
    throw ModelError("parameter set and priors disagree on the number of regimes");
}

}  // namespace detail

/// Bootstrap particle filter: particles are proposed from the regime and
/// state transitions, so the unnormalized weight is the observation density.
/// Multinomial resampling at every step.
inline ParticleSystem run_smc(std::span<const double> y, const ParameterSet& params,
                              const PriorSpec& priors, std::size_t n_particles,
                              const StreamFactory& streams, const EngineOptions& opts = {}) {
  detail::check_inputs(y, params, priors);
  if (n_particles < 1) throw ModelError("run_smc: need at least one particle");
  const std::size_t T = y.size();
  const std::size_t N = n_particles;
  const std::size_t K = params.regimes();
  ParticleSystem sys;
  sys.allocate(T, N, K, 0);

  detail::for_each_particle(N, opts.threads, [&](std::size_t i) {
    auto rng = streams.stream(StreamPurpose::Initial, 0, static_cast<std::uint32_t>(i));
    sys.theta(0, i) = detail::draw_initial(priors, opts, rng);
    sys.regime(0, i) = static_cast<int>(sample_index(K, rng));
    sys.log_weight(0, i) = obs_logdensity(y[0], sys.theta(0, i), 0, params);
  });
  detail::normalize_step(sys, 0);

  for (std::size_t t = 1; t < T; ++t) {
    const CategoricalTable table(sys.weight_row(t - 1));
    detail::for_each_particle(N, opts.threads, [&](std::size_t i) {
      const auto ti = static_cast<std::uint32_t>(t);
      const auto ii = static_cast<std::uint32_t>(i);
      auto resample_rng = streams.stream(StreamPurpose::Resample, ti, ii);
      const auto a = table.sample(resample_rng);
      sys.ancestor(t, i) = static_cast<int>(a);

      auto rng = streams.stream(StreamPurpose::Propagate, ti, ii);
      const auto prev_regime = static_cast<std::size_t>(sys.regime(t - 1, a));
      const auto x = sample_categorical(params.trans.row(prev_regime), rng);
      sys.regime(t, i) = static_cast<int>(x);
      sys.theta(t, i) = detail::draw_transition(sys.theta(t - 1, a), x, params, opts, rng);
      sys.log_weight(t, i) = obs_logdensity(y[t], sys.theta(t, i), t, params);
    });
    detail::normalize_step(sys, t);
  }
  return sys;
}

/// Slot (0-based) holding the reference particle for 0-based regime x.
inline std::size_t reference_slot(int x, std::size_t m_per_regime) {
  return (static_cast<std::size_t>(x) + 1) * m_per_regime - 1;
}

/// Conditional SMC with ancestor sampling and block-deterministic regimes.
///
/// Slots [kM, (k+1)M) always carry regime k. The reference particle sits in
/// the last slot of its regime's block. M ancestors are drawn per step and
/// shared by every block; the reference slot's ancestor is then redrawn with
/// the ancestor-sampling weights W_{t-1}^(i) g(theta_ref | theta^(i)) pi(x^(i), x_ref).
/// Because regimes are allocated rather than drawn, the incremental weight
/// is K * h(y_t | theta_t) * pi(x_{t-1}, x_t).
inline ParticleSystem run_csmc_as(std::span<const double> y, const ParameterSet& params,
                                  const PriorSpec& priors, const ReferenceTrajectory& reference,
                                  std::size_t m_per_regime, const StreamFactory& streams,
                                  const EngineOptions& opts = {}) {
  detail::check_inputs(y, params, priors);
  if (m_per_regime < 2) throw ModelError("run_csmc_as: need at least 2 particles per regime");
  if (opts.deterministic_transition)
    throw ModelError("run_csmc_as: deterministic transitions are only supported by run_smc");
  const std::size_t T = y.size();
  const std::size_t K = params.regimes();
  const std::size_t M = m_per_regime;
  const std::size_t N = K * M;
  if (reference.path.size() != T)
    throw ModelError("reference trajectory length does not match the observations");
  reference.path.validate(K);

  ParticleSystem sys;
  sys.allocate(T, N, K, M);
  sys.reference_slots.resize(T);
  const double log_k = std::log(static_cast<double>(K));

  // t = 1
  {
    const std::size_t m = reference_slot(reference.path.regimes[0], M);
    sys.reference_slots[0] = static_cast<int>(m);
    detail::for_each_particle(N, opts.threads, [&](std::size_t i) {
      if (i == m) {
        sys.theta(0, i) = reference.path.thetas[0];
      } else {
        auto rng = streams.stream(StreamPurpose::Initial, 0, static_cast<std::uint32_t>(i));
        sys.theta(0, i) = detail::draw_initial(priors, opts, rng);
      }
      sys.regime(0, i) = static_cast<int>(i / M);
      sys.log_weight(0, i) = obs_logdensity(y[0], sys.theta(0, i), 0, params);
    });
    detail::normalize_step(sys, 0);
  }

  std::vector<double> as_logw(N);
  for (std::size_t t = 1; t < T; ++t) {
    const auto ti = static_cast<std::uint32_t>(t);
    const int x_ref = reference.path.regimes[t];
    const SeirState& theta_ref = reference.path.thetas[t];
    const std::size_t m = reference_slot(x_ref, M);
    sys.reference_slots[t] = static_cast<int>(m);

    // M ancestor draws replicated across the K blocks.
    const CategoricalTable table(sys.weight_row(t - 1));
    for (std::size_t j = 0; j < M; ++j) {
      auto rng = streams.stream(StreamPurpose::Resample, ti, static_cast<std::uint32_t>(j));
      const auto a = static_cast<int>(table.sample(rng));
      for (std::size_t k = 0; k < K; ++k) sys.ancestor(t, k * M + j) = a;
    }

    // Ancestor sampling for the reference slot.
    const double prev_lse = log_sum_exp(sys.log_weight_row(t - 1));
    detail::for_each_particle(N, opts.threads, [&](std::size_t i) {
      const double lw = sys.log_weight(t - 1, i);
      if (lw == kNegInf) {
        as_logw[i] = kNegInf;
        return;
      }
      as_logw[i] = (lw - prev_lse) +
                   trans_logdensity(theta_ref, sys.theta(t - 1, i), x_ref, params) +
                   regime_logprob(x_ref, sys.regime(t - 1, i), params);
    });
    {
      const double lse = log_sum_exp(as_logw);
      if (lse == kNegInf || std::isnan(lse)) throw DegenerateWeightsError(t);
      for (auto& v : as_logw) v = std::exp(v - lse);
      auto rng = streams.stream(StreamPurpose::AncestorSample, ti, 0);
      sys.ancestor(t, m) = static_cast<int>(sample_categorical(as_logw, rng));
    }

    detail::for_each_particle(N, opts.threads, [&](std::size_t i) {
      const auto a = static_cast<std::size_t>(sys.ancestor(t, i));
      const auto x = i / M;
      sys.regime(t, i) = static_cast<int>(x);
      if (i == m) {
        sys.theta(t, i) = theta_ref;
      } else {
        auto rng = streams.stream(StreamPurpose::Propagate, ti, static_cast<std::uint32_t>(i));
        sys.theta(t, i) = detail::draw_transition(sys.theta(t - 1, a), x, params, opts, rng);
      }
      sys.log_weight(t, i) = obs_logdensity(y[t], sys.theta(t, i), t, params) +
                             regime_logprob(static_cast<int>(x), sys.regime(t - 1, a), params) +
                             log_k;
    });
    detail::normalize_step(sys, t);
  }
  return sys;
}

/// Draw B_T from the final weights and trace the lineage back to t = 1.
template <UniformSource G>
ReferenceTrajectory sample_reference(const ParticleSystem& sys, G& rng) {
  if (sys.T == 0 || sys.N == 0) throw ModelError("sample_reference: empty particle system");
  ReferenceTrajectory ref;
  ref.lineage.resize(sys.T);
  ref.path.thetas.resize(sys.T);
  ref.path.regimes.resize(sys.T);
  auto b = static_cast<int>(sample_categorical(sys.weight_row(sys.T - 1), rng));
  for (std::size_t t = sys.T; t-- > 0;) {
    ref.lineage[t] = b;
    ref.path.thetas[t] = sys.theta(t, static_cast<std::size_t>(b));
    ref.path.regimes[t] = sys.regime(t, static_cast<std::size_t>(b));
    if (t > 0) b = sys.ancestor(t, static_cast<std::size_t>(b));
  }
  return ref;
}

/// sum_t log((1/N) sum_i w_t^(i)) recomputed from the stored log weights.
inline double estimate_log_marginal(const ParticleSystem& sys) {
  double acc = 0.0;
  const double log_n = std::log(static_cast<double>(sys.N));
  for (std::size_t t = 0; t < sys.T; ++t) {
    const double lse = log_sum_exp(sys.log_weight_row(t));
    if (lse == kNegInf) return kNegInf;
    acc += lse - log_n;
  }
  return acc;
}

/// Columnar dump: t,particle,regime,S,E,I,R,log_weight,norm_weight,ancestor
/// (all indices 1-based; ancestor empty at t = 1).
inline void write_particle_dump(const ParticleSystem& sys, std::ostream& os) {
  const auto old_precision = os.precision(17);
  os << "t,particle,regime,S,E,I,R,log_weight,norm_weight,ancestor\n";
  for (std::size_t t = 0; t < sys.T; ++t) {
    for (std::size_t i = 0; i < sys.N; ++i) {
      const auto& th = sys.theta(t, i);
      os << t + 1 << ',' << i + 1 << ',' << sys.regime(t, i) + 1 << ',' << th.s() << ','
         << th.e() << ',' << th.i() << ',' << th.r() << ',' << sys.log_weight(t, i) << ','
         << sys.weight(t, i) << ',';
      if (t > 0) os << sys.ancestor(t, i) + 1;
      os << '\n';
    }
  }
  os.precision(old_precision);
}

}  // namespace bdseir
