#pragma once

// Deterministic propagation of the modified SEIR system
//
//   dS/dt = -f beta S I
//   dE/dt =  f beta S I - alpha E
//   dI/dt =  alpha E - gamma I
//   dR/dt =  gamma I
//
// with classical fourth-order Runge-Kutta over one model time unit.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bdseir {

class DynamicsError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Compartment proportions [S, E, I, R] on the 3-simplex.
struct SeirState {
  std::array<double, 4> c{};

  constexpr double s() const noexcept { return c[0]; }
  constexpr double e() const noexcept { return c[1]; }
  constexpr double i() const noexcept { return c[2]; }
  constexpr double r() const noexcept { return c[3]; }

  constexpr double operator[](std::size_t k) const noexcept { return c[k]; }
  constexpr double& operator[](std::size_t k) noexcept { return c[k]; }

  double sum() const noexcept { return (c[0] + c[1]) + (c[2] + c[3]); }

  std::span<const double, 4> span() const noexcept { return c; }
  std::span<double, 4> span() noexcept { return c; }

  friend bool operator==(const SeirState&, const SeirState&) = default;
};

struct EpidemicRates {
  double alpha = 0.0;    // latency rate
  double beta = 0.0;     // transmission rate
  double gamma = 0.0;    // recovery rate
  double modifier = 1.0; // regime transmission modifier f in (0, 1]

  void validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0) || !std::isfinite(alpha) ||
        !std::isfinite(beta) || !std::isfinite(gamma))
      throw DynamicsError("epidemic rates must be positive and finite");
    if (!(modifier > 0.0) || modifier > 1.0)
      throw DynamicsError("transmission modifier must lie in (0, 1]");
  }
};

/// Lower/upper clamp applied to propagated means before they are used as
/// Dirichlet concentrations.
inline constexpr double kStateFloor = 1e-10;

namespace detail {

inline std::array<double, 4> seir_derivative(const std::array<double, 4>& x,
                                             const EpidemicRates& r) noexcept {
  const double infection = r.modifier * r.beta * x[0] * x[2];
  const double onset = r.alpha * x[1];
  const double recovery = r.gamma * x[2];
  return {-infection, infection - onset, onset - recovery, recovery};
}

}  // namespace detail

/// One RK4 step of length `h`, no clamping. Exposed for tests.
inline SeirState rk4_raw(const SeirState& state, const EpidemicRates& rates, double h = 1.0) {
  const auto& x = state.c;
  std::array<double, 4> tmp{};

  const auto k1 = detail::seir_derivative(x, rates);
  for (int k = 0; k < 4; ++k) tmp[k] = x[k] + 0.5 * h * k1[k];
  const auto k2 = detail::seir_derivative(tmp, rates);
  for (int k = 0; k < 4; ++k) tmp[k] = x[k] + 0.5 * h * k2[k];
  const auto k3 = detail::seir_derivative(tmp, rates);
  for (int k = 0; k < 4; ++k) tmp[k] = x[k] + h * k3[k];
  const auto k4 = detail::seir_derivative(tmp, rates);

  SeirState out;
  for (int k = 0; k < 4; ++k)
    out.c[k] = x[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
  return out;
}

/// Clamp every component into [1e-10, 1 - 1e-10] and renormalize.
inline SeirState guard_simplex(SeirState s) {
  double total = 0.0;
  for (auto& v : s.c) {
    if (!std::isfinite(v)) throw DynamicsError("SEIR propagation produced a non-finite value");
    v = std::clamp(v, kStateFloor, 1.0 - kStateFloor);
    total += v;
  }
  for (auto& v : s.c) v /= total;
  return s;
}

/// Propagate one model time unit. Returns the Dirichlet mean vector used by
/// the state transition. `substeps` > 1 integrates the unit interval in
/// equal RK4 sub-steps.
inline SeirState rk4_step(const SeirState& state, const EpidemicRates& rates, int substeps = 1) {
  if (substeps < 1) throw DynamicsError("rk4 substeps must be >= 1");
  SeirState x = state;
  const double h = 1.0 / substeps;
  for (int k = 0; k < substeps; ++k) x = rk4_raw(x, rates, h);
  return guard_simplex(x);
}

/// Iterates rk4_step; element k is the state after k + 1 steps.
inline std::vector<SeirState> propagate_path(const SeirState& initial,
                                             std::span<const EpidemicRates> rates_per_step,
                                             std::size_t steps, int substeps = 1) {
  if (steps < 1) throw DynamicsError("propagate_path: steps must be >= 1");
  if (rates_per_step.size() != steps)
    throw DynamicsError("propagate_path: need one rate set per step");
  std::vector<SeirState> path;
  path.reserve(steps);
  SeirState x = initial;
  for (std::size_t t = 0; t < steps; ++t) {
    try {
      rates_per_step[t].validate();
      x = rk4_step(x, rates_per_step[t], substeps);
    } catch (const DynamicsError& e) {
      throw DynamicsError("step " + std::to_string(t + 1) + ": " + e.what());
    }
    path.push_back(x);
  }
  return path;
}

}  // namespace bdseir
