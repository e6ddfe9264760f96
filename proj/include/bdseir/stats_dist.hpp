#pragma once

// Sampling and log-density primitives for the distributions the model uses:
// Beta, Dirichlet, Gamma, truncated Normal, categorical and Uniform.
//
// Log densities return -inf outside the support and throw DomainError for
// invalid parameters. Samplers take any generator exposing uniform() on (0,1).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace bdseir {

class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

template <class G>
concept UniformSource = requires(G& g) {
  { g.uniform() } -> std::convertible_to<double>;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct TruncNormalParams {
  double mean = 0.0;
  double sd = 1.0;
  double lower = kNegInf;
  double upper = kInf;

  void validate() const {
    if (!(sd > 0.0) || !std::isfinite(sd) || !std::isfinite(mean))
      throw DomainError("truncated normal: sd must be positive and finite");
    if (!(lower < upper))
      throw DomainError("truncated normal: lower bound must be below upper bound");
  }
};

struct BetaParams {
  double a = 1.0;
  double b = 1.0;

  void validate() const {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
      throw DomainError("beta: shape parameters must be positive and finite");
  }
};

struct GammaParams {
  double shape = 1.0;
  double rate = 1.0;

  void validate() const {
    if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate))
      throw DomainError("gamma: shape and rate must be positive and finite");
  }
};

struct UniformParams {
  double lower = 0.0;
  double upper = 1.0;

  void validate() const {
    if (!(lower < upper) || !std::isfinite(lower) || !std::isfinite(upper))
      throw DomainError("uniform: need finite lower < upper");
  }
};

struct DirichletParams {
  std::vector<double> concentration;

  void validate() const {
    if (concentration.size() < 2) throw DomainError("dirichlet: dimension must be >= 2");
    for (double c : concentration)
      if (!(c > 0.0) || !std::isfinite(c))
        throw DomainError("dirichlet: concentrations must be positive and finite");
  }
};

// ---------------------------------------------------------------------------
// Special functions

/// log Gamma(x) for x > 0. Thread safe (std::lgamma writes signgam).
inline double log_gamma_fn(double x) { return boost::math::lgamma(x); }

inline double log_beta_fn(double a, double b) {
  return log_gamma_fn(a) + log_gamma_fn(b) - log_gamma_fn(a + b);
}

/// log of the multivariate Beta function, sum(lgamma(a_i)) - lgamma(sum a_i).
inline double log_multivariate_beta(std::span<const double> alpha) {
  double acc = 0.0;
  double total = 0.0;
  for (double a : alpha) {
    acc += log_gamma_fn(a);
    total += a;
  }
  return acc - log_gamma_fn(total);
}

/// log(exp(a) + exp(b)) without overflow.
inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  if (m == kInf) return kInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Standard normal survival function 1 - Phi(z).
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// log(1 - Phi(z)); accurate far into the upper tail.
inline double log_normal_sf(double z) {
  if (z < 30.0) return std::log(normal_sf(z));
  // Asymptotic expansion of the Mills ratio.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

/// Inverse of the standard normal CDF for p in (0, 1).
inline double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

/// Inverse of the standard normal survival function for q in (0, 1).
inline double normal_sf_quantile(double q) {
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
}

inline double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// log(Phi(b) - Phi(a)) for standardized bounds a < b.
inline double log_normal_mass(double a, double b) {
  if (a >= b) return kNegInf;
  if (a > 0.0) {
    // Both bounds in the upper tail: work with survival functions.
    const double la = log_normal_sf(a);
    if (b == kInf) return la;
    const double lb = log_normal_sf(b);
    return la + std::log1p(-std::exp(lb - la));
  }
  if (b < 0.0) return log_normal_mass(-b, -a);
  const double lower_tail = (a == kNegInf) ? 0.0 : normal_cdf(a);
  const double upper_tail = (b == kInf) ? 0.0 : normal_sf(b);
  return std::log1p(-(lower_tail + upper_tail));
}

// ---------------------------------------------------------------------------
// Uniform

template <UniformSource G>
double sample_uniform(const UniformParams& p, G& rng) {
  return p.lower + (p.upper - p.lower) * rng.uniform();
}

inline double uniform_logpdf(double x, const UniformParams& p) {
  p.validate();
  if (!(x > p.lower && x < p.upper)) return kNegInf;
  return -std::log(p.upper - p.lower);
}

/// Uniform integer on [0, n).
template <UniformSource G>
std::size_t sample_index(std::size_t n, G& rng) {
  const auto k = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
  return std::min(k, n - 1);
}

// ---------------------------------------------------------------------------
// Normal and truncated normal

template <UniformSource G>
double sample_std_normal(G& rng) {
  // Box-Muller without caching so a stream's draws do not depend on history.
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace detail {

// Robert (1995) exponential rejection for standardized [a, b] with a > 0.
template <UniformSource G>
double sample_upper_tail(double a, double b, G& rng) {
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(rng.uniform()) / rate;
    if (z >= b) continue;
    const double d = z - rate;
    if (std::log(rng.uniform()) < -0.5 * d * d) return z;
  }
}

// Standardized draw on (a, b).
template <UniformSource G>
double sample_std_trunc_normal(double a, double b, G& rng) {
  if (b <= 0.0 && a < b) return -sample_std_trunc_normal(-b, -a, rng);
  const double log_mass = log_normal_mass(a, b);
  if (log_mass > std::log(0.1)) {
    for (;;) {
      const double z = sample_std_normal(rng);
      if (z > a && z < b) return z;
    }
  }
  // Inverse CDF. With a > 0 the upper-tail (survival) form avoids cancellation.
  const double u = rng.uniform();
  double z;
  if (a > 0.0) {
    const double sa = normal_sf(a);
    if (sa < 1e-300) return sample_upper_tail(a, b, rng);
    const double sb = (b == kInf) ? 0.0 : normal_sf(b);
    z = normal_sf_quantile(sa - u * (sa - sb));
  } else {
    const double fa = (a == kNegInf) ? 0.0 : normal_cdf(a);
    const double fb = (b == kInf) ? 1.0 : normal_cdf(b);
    z = normal_quantile(fa + u * (fb - fa));
  }
  // Rounding can land exactly on a bound; keep the draw strictly inside.
  if (!(z > a)) z = std::nextafter(a, b);
  if (!(z < b)) z = std::nextafter(b, a);
  return z;
}

}  // namespace detail

/// Draw from N(mean, sd^2) restricted to (lower, upper).
///
/// Rejection from the untruncated normal when the interval holds more than
/// 10% of the mass, inverse-CDF otherwise.
template <UniformSource G>
double sample_trunc_normal(const TruncNormalParams& p, G& rng) {
  p.validate();
  const double a = (p.lower - p.mean) / p.sd;
  const double b = (p.upper - p.mean) / p.sd;
  double x = p.mean + p.sd * detail::sample_std_trunc_normal(a, b, rng);
  if (!(x > p.lower)) x = std::nextafter(p.lower, p.upper);
  if (!(x < p.upper)) x = std::nextafter(p.upper, p.lower);
  return x;
}

inline double trunc_normal_logpdf(double x, const TruncNormalParams& p) {
  p.validate();
  if (std::isnan(x)) throw DomainError("truncated normal: NaN argument");
  if (!(x > p.lower && x < p.upper)) return kNegInf;
  const double a = (p.lower - p.mean) / p.sd;
  const double b = (p.upper - p.mean) / p.sd;
  return normal_logpdf(x, p.mean, p.sd) - log_normal_mass(a, b);
}

// ---------------------------------------------------------------------------
// Gamma

/// log of a Gamma(shape, 1) draw. Stays finite for tiny shapes where the
/// draw itself would underflow.
template <UniformSource G>
double sample_log_std_gamma(double shape, G& rng) {
  if (shape < 1.0) {
    // Gamma(a) = Gamma(a + 1) * U^(1/a)
    const double log_u = std::log(rng.uniform());
    return sample_log_std_gamma(shape + 1.0, rng) + log_u / shape;
  }
  // Marsaglia & Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = sample_std_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

template <UniformSource G>
double sample_gamma(const GammaParams& p, G& rng) {
  p.validate();
  return std::exp(sample_log_std_gamma(p.shape, rng)) / p.rate;
}

inline double gamma_logpdf(double x, const GammaParams& p) {
  p.validate();
  if (std::isnan(x)) throw DomainError("gamma: NaN argument");
  if (!(x > 0.0) || x == kInf) return kNegInf;
  return p.shape * std::log(p.rate) - log_gamma_fn(p.shape) + (p.shape - 1.0) * std::log(x) -
         p.rate * x;
}

// ---------------------------------------------------------------------------
// Beta

template <UniformSource G>
double sample_beta(const BetaParams& p, G& rng) {
  p.validate();
  const double la = sample_log_std_gamma(p.a, rng);
  const double lb = sample_log_std_gamma(p.b, rng);
  // a / (a + b) computed from logs: 1 / (1 + exp(lb - la)).
  return 1.0 / (1.0 + std::exp(lb - la));
}

inline double beta_logpdf(double y, const BetaParams& p) {
  p.validate();
  if (std::isnan(y)) throw DomainError("beta: NaN argument");
  if (!(y > 0.0 && y < 1.0)) return kNegInf;
  return (p.a - 1.0) * std::log(y) + (p.b - 1.0) * std::log1p(-y) - log_beta_fn(p.a, p.b);
}

// ---------------------------------------------------------------------------
// Dirichlet

inline constexpr double kDirichletFloor = 1e-12;
inline constexpr double kSimplexTolerance = 1e-12;

/// Fills `out` with a Dirichlet(concentration) draw. Components are floored
/// at 1e-12 and renormalized so downstream log densities stay finite.
template <UniformSource G>
void sample_dirichlet(std::span<const double> concentration, std::span<double> out, G& rng) {
  const std::size_t d = concentration.size();
  double max_log = kNegInf;
  for (std::size_t k = 0; k < d; ++k) {
    out[k] = sample_log_std_gamma(concentration[k], rng);
    max_log = std::max(max_log, out[k]);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    out[k] = std::exp(out[k] - max_log);
    total += out[k];
  }
  bool floored = false;
  for (std::size_t k = 0; k < d; ++k) {
    out[k] /= total;
    if (out[k] < kDirichletFloor) {
      out[k] = kDirichletFloor;
      floored = true;
    }
  }
  if (floored) {
    const double s = std::accumulate(out.begin(), out.end(), 0.0);
    for (auto& v : out) v /= s;
  }
}

template <UniformSource G>
std::vector<double> sample_dirichlet(const DirichletParams& p, G& rng) {
  p.validate();
  std::vector<double> out(p.concentration.size());
  sample_dirichlet(std::span<const double>(p.concentration), std::span<double>(out), rng);
  return out;
}

/// Unchecked Dirichlet log density; `x` must be on the simplex.
inline double dirichlet_logpdf_unchecked(std::span<const double> x,
                                         std::span<const double> concentration) {
  double acc = -log_multivariate_beta(concentration);
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0 && x[k] < 1.0)) return kNegInf;
    acc += (concentration[k] - 1.0) * std::log(x[k]);
  }
  return acc;
}

inline double dirichlet_logpdf(std::span<const double> x, const DirichletParams& p) {
  p.validate();
  if (x.size() != p.concentration.size())
    throw DomainError("dirichlet: dimension mismatch");
  double s = 0.0;
  for (double v : x) {
    if (std::isnan(v)) throw DomainError("dirichlet: NaN component");
    s += v;
  }
  if (std::abs(s - 1.0) > kSimplexTolerance)
    throw DomainError("dirichlet: argument is not on the simplex (sum = " + std::to_string(s) +
                      ")");
  return dirichlet_logpdf_unchecked(x, p.concentration);
}

// ---------------------------------------------------------------------------
// Categorical

namespace detail {
inline double checked_weight_total(std::span<const double> w) {
  if (w.empty()) throw DomainError("categorical: empty weight vector");
  double total = 0.0;
  for (double v : w) {
    if (std::isnan(v) || v < 0.0) throw DomainError("categorical: negative or NaN weight");
    total += v;
  }
  if (!(total > 0.0) || !std::isfinite(total))
    throw DomainError("categorical: weights sum to zero");
  return total;
}
}  // namespace detail

/// Index in [0, weights.size()) drawn with probability proportional to weight.
template <UniformSource G>
std::size_t sample_categorical(std::span<const double> weights, G& rng) {
  const double total = detail::checked_weight_total(weights);
  const double target = rng.uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > 0.0) last_positive = i;
    acc += weights[i];
    if (target < acc && weights[i] > 0.0) return i;
  }
  return last_positive;
}

/// Cumulative table for repeated draws from one weight vector.
class CategoricalTable {
public:
  explicit CategoricalTable(std::span<const double> weights) : cdf_(weights.size()) {
    const double total = detail::checked_weight_total(weights);
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      cdf_[i] = acc / total;
    }
    // Guard the last positive entry against rounding below 1.
    for (std::size_t i = weights.size(); i-- > 0;) {
      if (weights[i] > 0.0) {
        for (std::size_t j = i; j < cdf_.size(); ++j) cdf_[j] = 1.0;
        break;
      }
    }
  }

  template <UniformSource G>
  std::size_t sample(G& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                             std::ssize(cdf_) - 1));
  }

  std::size_t size() const noexcept { return cdf_.size(); }

private:
  std::vector<double> cdf_;
};

}  // namespace bdseir
