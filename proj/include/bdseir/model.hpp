#pragma once

// The Beta-Dirichlet switching state-space SEIR model.
//
//   x_t | x_{t-1}          ~ Categorical(pi[x_{t-1}, .])
//   theta_t | theta_{t-1}  ~ Dirichlet(kappa * rk4(theta_{t-1}; alpha, beta, gamma, f[x_t]))
//   y_t | theta_t          ~ Beta(lambda * p_t * I_t, lambda * (1 - p_t * I_t))
//
// with theta_1 ~ Dirichlet(theta1 prior) and x_1 uniform on the K regimes.
// Regimes are 0-based in code and 1-based in every file format.

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bdseir/seir_dynamics.hpp"
#include "bdseir/stats_dist.hpp"

namespace bdseir {

class ModelError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Observations are pulled this far into (0, 1) before use.
inline constexpr double kObservationEpsilon = 1e-6;

inline double clamp_observation(double y) {
  return std::min(std::max(y, kObservationEpsilon), 1.0 - kObservationEpsilon);
}

/// Row-stochastic K x K matrix of regime transition probabilities.
class TransitionMatrix {
public:
  TransitionMatrix() = default;

  explicit TransitionMatrix(std::size_t k) : k_(k), p_(k * k, 0.0) {
    for (std::size_t i = 0; i < k; ++i) p_[i * k + i] = 1.0;
  }

  static TransitionMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    TransitionMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw ModelError("transition matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t size() const noexcept { return k_; }
  double operator()(std::size_t i, std::size_t j) const { return p_[i * k_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return p_[i * k_ + j]; }
  std::span<const double> row(std::size_t i) const { return {p_.data() + i * k_, k_}; }
  std::span<double> row(std::size_t i) { return {p_.data() + i * k_, k_}; }

  void validate() const {
    for (std::size_t i = 0; i < k_; ++i) {
      double s = 0.0;
      for (double v : row(i)) {
        if (!(v >= 0.0 && v <= 1.0)) throw ModelError("transition probabilities must be in [0,1]");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9)
        throw ModelError("transition matrix row " + std::to_string(i + 1) + " sums to " +
                         std::to_string(s));
    }
  }

  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;

private:
  std::size_t k_ = 0;
  std::vector<double> p_;
};

/// Prior band (lower, upper) of the modifier for 0-based regime k >= 1 of K.
/// The K - 1 bands partition (0, 1); regime 1 is fixed at f = 1.
inline std::pair<double, double> modifier_band(std::size_t K, std::size_t k) {
  if (K < 2 || k < 1 || k >= K) throw ModelError("modifier_band: regime out of range");
  const double width = 1.0 / static_cast<double>(K - 1);
  const double upper = 1.0 - static_cast<double>(k - 1) * width;
  const double lower = (k == K - 1) ? 0.0 : 1.0 - static_cast<double>(k) * width;
  return {lower, upper};
}

/// Identification rate active from time `start` (1-based) until the next entry.
struct IdentificationRate {
  double rate = 0.25;
  int start = 1;
  friend bool operator==(const IdentificationRate&, const IdentificationRate&) = default;
};

struct ParameterSet {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double lambda = 0.0;
  double kappa = 0.0;
  std::vector<IdentificationRate> ident{{0.25, 1}};
  TransitionMatrix trans{1};
  std::vector<double> modifiers{1.0};
  // Structural constant, never sampled: RK4 sub-steps per time unit.
  int rk4_substeps = 1;

  std::size_t regimes() const noexcept { return modifiers.size(); }

  /// Identification rate for 0-based time index t.
  double ident_rate_at(std::size_t t) const noexcept {
    double p = ident.front().rate;
    for (const auto& r : ident)
      if (static_cast<std::size_t>(r.start) <= t + 1) p = r.rate;
    return p;
  }

  EpidemicRates rates_for(std::size_t regime) const noexcept {
    return {alpha, beta, gamma, modifiers[regime]};
  }

  double basic_reproduction_number() const noexcept { return beta / gamma; }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw ModelError(std::string(name) + " must be positive and finite");
    };
    positive(alpha, "alpha");
    positive(beta, "beta");
    positive(gamma, "gamma");
    positive(lambda, "lambda");
    positive(kappa, "kappa");
    if (ident.empty()) throw ModelError("at least one identification rate is required");
    if (ident.front().start != 1) throw ModelError("first identification rate must start at t=1");
    for (std::size_t j = 0; j < ident.size(); ++j) {
      if (!(ident[j].rate > 0.0 && ident[j].rate < 1.0))
        throw ModelError("identification rates must lie in (0,1)");
      if (j > 0 && ident[j].start <= ident[j - 1].start)
        throw ModelError("identification change times must be strictly increasing");
    }
    const std::size_t K = regimes();
    if (K < 1) throw ModelError("need at least one regime");
    if (trans.size() != K) throw ModelError("transition matrix size does not match modifiers");
    trans.validate();
    if (modifiers[0] != 1.0) throw ModelError("modifier of regime 1 must equal 1");
    for (std::size_t k = 1; k < K; ++k) {
      const auto [lo, hi] = modifier_band(K, k);
      if (!(modifiers[k] > lo && modifiers[k] < hi))
        throw ModelError("modifier f_" + std::to_string(k + 1) + " outside its band");
    }
    if (rk4_substeps < 1) throw ModelError("rk4_substeps must be >= 1");
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

struct IdentificationPrior {
  TruncNormalParams prior{0.25, 0.05, 0.1, 0.4};
  int start = 1;
};

/// Hyperparameters for every model parameter and the initial latent state.
struct PriorSpec {
  TruncNormalParams alpha{0.3, 0.1, 0.0, kInf};
  TruncNormalParams beta{0.4, 0.1, 0.0, kInf};
  TruncNormalParams gamma{0.2, 0.1, 0.0, kInf};
  GammaParams lambda{2.0, 0.001};
  GammaParams kappa{200.0, 0.01};
  std::vector<IdentificationPrior> ident{IdentificationPrior{}};
  std::vector<DirichletParams> rows{DirichletParams{{10.0, 1.0}}, DirichletParams{{1.0, 10.0}}};
  DirichletParams theta1{{100.0, 1.0, 1.0, 1.0}};

  std::size_t regimes() const noexcept { return rows.size(); }

  /// Row priors with `diagonal` on the diagonal and `off_diagonal` elsewhere.
  /// K = 1 yields a single degenerate row.
  static std::vector<DirichletParams> sticky_rows(std::size_t K, double diagonal,
                                                  double off_diagonal) {
    std::vector<DirichletParams> rows(K);
    for (std::size_t i = 0; i < K; ++i) {
      rows[i].concentration.assign(K, off_diagonal);
      rows[i].concentration[i] = diagonal;
    }
    return rows;
  }

  void validate() const {
    for (const auto* tn : {&alpha, &beta, &gamma}) {
      tn->validate();
      if (tn->lower < 0.0) throw ModelError("rate priors must be supported on positive values");
    }
    lambda.validate();
    kappa.validate();
    if (ident.empty()) throw ModelError("at least one identification-rate prior is required");
    if (ident.front().start != 1)
      throw ModelError("first identification rate must start at t=1");
    for (std::size_t j = 0; j < ident.size(); ++j) {
      ident[j].prior.validate();
      if (ident[j].prior.lower < 0.0 || ident[j].prior.upper > 1.0)
        throw ModelError("identification-rate priors must be supported inside [0,1]");
      if (j > 0 && ident[j].start <= ident[j - 1].start)
        throw ModelError("identification change times must be strictly increasing");
    }
    const std::size_t K = regimes();
    if (K < 1) throw ModelError("need at least one regime");
    for (const auto& r : rows) {
      if (r.concentration.size() != K)
        throw ModelError("transition row prior dimension must equal K");
      // K = 1 rows are degenerate (a single 1.0 entry) and carry no density.
      if (K >= 2) r.validate();
    }
    theta1.validate();
    if (theta1.concentration.size() != 4) throw ModelError("theta1 prior must be 4-dimensional");
  }
};

/// Latent trajectory: SEIR states and 0-based regimes for t = 1..T.
struct LatentPath {
  std::vector<SeirState> thetas;
  std::vector<int> regimes;

  std::size_t size() const noexcept { return thetas.size(); }

  void validate(std::size_t K) const {
    if (thetas.size() != regimes.size()) throw ModelError("latent path lengths differ");
    for (std::size_t t = 0; t < thetas.size(); ++t) {
      if (std::abs(thetas[t].sum() - 1.0) > 1e-9)
        throw ModelError("latent state at t=" + std::to_string(t + 1) + " is not on the simplex");
      for (double v : thetas[t].c)
        if (!(v > 0.0 && v < 1.0))
          throw ModelError("latent state at t=" + std::to_string(t + 1) + " has a boundary value");
      if (regimes[t] < 0 || static_cast<std::size_t>(regimes[t]) >= K)
        throw ModelError("regime at t=" + std::to_string(t + 1) + " out of range");
    }
  }

  friend bool operator==(const LatentPath&, const LatentPath&) = default;
};

// ---------------------------------------------------------------------------
// Log densities

/// Beta observation log density given mean m = p * I and precision lambda.
inline double obs_logdensity_mean(double y, double mean, double lambda) {
  const double a = lambda * mean;
  const double b = lambda * (1.0 - mean);
  if (!(a > 0.0) || !(b > 0.0)) return kNegInf;
  if (!(y > 0.0 && y < 1.0)) return kNegInf;
  return (a - 1.0) * std::log(y) + (b - 1.0) * std::log1p(-y) - log_beta_fn(a, b);
}

/// log h(y_t | theta_t) for 0-based time index t.
inline double obs_logdensity(double y, const SeirState& theta, std::size_t t,
                             const ParameterSet& p) {
  return obs_logdensity_mean(y, p.ident_rate_at(t) * theta.i(), p.lambda);
}

/// log Dirichlet(theta_next; kappa * mean).
inline double dirichlet4_logpdf(const SeirState& theta_next, const SeirState& mean,
                                double kappa) {
  double acc = log_gamma_fn(kappa);
  for (int k = 0; k < 4; ++k) {
    const double a = kappa * mean[k];
    const double x = theta_next[k];
    if (!(a > 0.0) || !(x > 0.0 && x < 1.0)) return kNegInf;
    acc += (a - 1.0) * std::log(x) - log_gamma_fn(a);
  }
  return acc;
}

/// log g(theta_next | theta, x_next).
inline double trans_logdensity(const SeirState& theta_next, const SeirState& theta, int x_next,
                               const ParameterSet& p) {
  const SeirState mean = rk4_step(theta, p.rates_for(static_cast<std::size_t>(x_next)),
                                  p.rk4_substeps);
  return dirichlet4_logpdf(theta_next, mean, p.kappa);
}

/// log pi[x, x_next].
inline double regime_logprob(int x_next, int x, const ParameterSet& p) {
  const double v = p.trans(static_cast<std::size_t>(x), static_cast<std::size_t>(x_next));
  return v > 0.0 ? std::log(v) : kNegInf;
}

inline double initial_state_logdensity(const SeirState& theta1, const PriorSpec& priors) {
  return dirichlet_logpdf_unchecked(theta1.span(), priors.theta1.concentration);
}

inline double initial_regime_logprob(const PriorSpec& priors) {
  return -std::log(static_cast<double>(priors.regimes()));
}

/// Sum of the log prior densities of every parameter.
inline double log_prior(const ParameterSet& p, const PriorSpec& priors) {
  double acc = trunc_normal_logpdf(p.alpha, priors.alpha);
  acc += trunc_normal_logpdf(p.beta, priors.beta);
  acc += trunc_normal_logpdf(p.gamma, priors.gamma);
  acc += gamma_logpdf(p.lambda, priors.lambda);
  acc += gamma_logpdf(p.kappa, priors.kappa);
  for (std::size_t j = 0; j < priors.ident.size(); ++j)
    acc += trunc_normal_logpdf(p.ident[j].rate, priors.ident[j].prior);
  const std::size_t K = priors.regimes();
  if (K >= 2) {
    for (std::size_t k = 0; k < K; ++k)
      acc += dirichlet_logpdf_unchecked(p.trans.row(k), priors.rows[k].concentration);
    for (std::size_t k = 1; k < K; ++k) {
      const auto [lo, hi] = modifier_band(K, k);
      acc += uniform_logpdf(p.modifiers[k], {lo, hi});
    }
  }
  return acc;
}

/// Which likelihood factors enter the joint posterior. Disabling factors is
/// a test hook for prior-recovery checks.
struct LikelihoodMask {
  bool obs = true;
  bool trans = true;
  bool regime = true;
};

inline double obs_term(const LatentPath& path, std::span<const double> y, const ParameterSet& p) {
  double acc = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) acc += obs_logdensity(y[t], path.thetas[t], t, p);
  return acc;
}

inline double trans_term(const LatentPath& path, const ParameterSet& p) {
  double acc = 0.0;
  for (std::size_t t = 1; t < path.size(); ++t)
    acc += trans_logdensity(path.thetas[t], path.thetas[t - 1], path.regimes[t], p);
  return acc;
}

inline double regime_term(const LatentPath& path, const ParameterSet& p) {
  double acc = 0.0;
  for (std::size_t t = 1; t < path.size(); ++t)
    acc += regime_logprob(path.regimes[t], path.regimes[t - 1], p);
  return acc;
}

/// Factor-by-factor breakdown of the joint log posterior (up to the
/// normalizing constant p(y)).
struct PosteriorTerms {
  double obs = 0.0;
  double trans = 0.0;
  double regime = 0.0;
  double initial_state = 0.0;
  double initial_regime = 0.0;
  double prior = 0.0;

  double total() const noexcept {
    return ((obs + trans) + (regime + initial_state)) + (initial_regime + prior);
  }
};

inline void check_lengths(const LatentPath& path, std::span<const double> y) {
  if (path.size() != y.size() || path.regimes.size() != y.size())
    throw ModelError("latent path and observation series lengths differ");
  if (y.empty()) throw ModelError("empty observation series");
}

inline PosteriorTerms posterior_terms(const LatentPath& path, std::span<const double> y,
                                      const ParameterSet& p, const PriorSpec& priors,
                                      const LikelihoodMask& mask = {}) {
  check_lengths(path, y);
  PosteriorTerms terms;
  if (mask.obs) terms.obs = obs_term(path, y, p);
  if (mask.trans) terms.trans = trans_term(path, p);
  if (mask.regime) terms.regime = regime_term(path, p);
  terms.initial_state = initial_state_logdensity(path.thetas.front(), priors);
  terms.initial_regime = initial_regime_logprob(priors);
  terms.prior = log_prior(p, priors);
  return terms;
}

/// log p(theta_{1:T}, x_{1:T}, psi | y_{1:T}) up to an additive constant.
inline double joint_log_posterior(const LatentPath& path, std::span<const double> y,
                                  const ParameterSet& p, const PriorSpec& priors,
                                  const LikelihoodMask& mask = {}) {
  const double v = posterior_terms(path, y, p, priors, mask).total();
  return std::isnan(v) ? kNegInf : v;
}

// ---------------------------------------------------------------------------
// Sampling

template <UniformSource G>
std::pair<SeirState, int> sample_initial(const PriorSpec& priors, G& rng) {
  SeirState theta;
  sample_dirichlet(std::span<const double>(priors.theta1.concentration), theta.span(), rng);
  const auto x = static_cast<int>(sample_index(priors.regimes(), rng));
  return {theta, x};
}

/// Draw every parameter independently from its prior.
template <UniformSource G>
ParameterSet sample_parameters(const PriorSpec& priors, G& rng) {
  ParameterSet p;
  p.alpha = sample_trunc_normal(priors.alpha, rng);
  p.beta = sample_trunc_normal(priors.beta, rng);
  p.gamma = sample_trunc_normal(priors.gamma, rng);
  p.lambda = sample_gamma(priors.lambda, rng);
  p.kappa = sample_gamma(priors.kappa, rng);
  p.ident.clear();
  for (const auto& ip : priors.ident) p.ident.push_back({sample_trunc_normal(ip.prior, rng), ip.start});
  const std::size_t K = priors.regimes();
  p.trans = TransitionMatrix(K);
  p.modifiers.assign(K, 1.0);
  if (K >= 2) {
    for (std::size_t k = 0; k < K; ++k) {
      const auto row = sample_dirichlet(priors.rows[k], rng);
      std::copy(row.begin(), row.end(), p.trans.row(k).begin());
    }
    for (std::size_t k = 1; k < K; ++k) {
      const auto [lo, hi] = modifier_band(K, k);
      double f = sample_uniform({lo, hi}, rng);
      if (!(f > lo)) f = std::nextafter(lo, hi);
      p.modifiers[k] = f;
    }
  }
  return p;
}

struct SimulatedData {
  std::vector<double> y;
  LatentPath path;
};

/// Forward-simulate regimes, latent states and observations for T steps.
/// Observations are clamped to (1e-6, 1 - 1e-6) like ingested data.
template <UniformSource G>
SimulatedData simulate_dataset(const ParameterSet& params, const PriorSpec& priors, std::size_t T,
                               const std::optional<std::pair<SeirState, int>>& initial, G& rng) {
  if (T < 2) throw ModelError("simulate_dataset: T must be >= 2");
  params.validate();
  SimulatedData out;
  out.path.thetas.resize(T);
  out.path.regimes.resize(T);
  const auto [theta1, x1] = initial ? *initial : sample_initial(priors, rng);
  out.path.thetas[0] = theta1;
  out.path.regimes[0] = x1;
  std::array<double, 4> conc{};
  for (std::size_t t = 1; t < T; ++t) {
    const int prev = out.path.regimes[t - 1];
    const int x = static_cast<int>(
        sample_categorical(params.trans.row(static_cast<std::size_t>(prev)), rng));
    out.path.regimes[t] = x;
    const SeirState mean = rk4_step(out.path.thetas[t - 1],
                                    params.rates_for(static_cast<std::size_t>(x)),
                                    params.rk4_substeps);
    for (int k = 0; k < 4; ++k) conc[k] = params.kappa * mean[k];
    sample_dirichlet(std::span<const double>(conc), out.path.thetas[t].span(), rng);
  }
  out.y.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double m = params.ident_rate_at(t) * out.path.thetas[t].i();
    out.y[t] = clamp_observation(
        sample_beta({params.lambda * m, params.lambda * (1.0 - m)}, rng));
  }
  return out;
}

}  // namespace bdseir
