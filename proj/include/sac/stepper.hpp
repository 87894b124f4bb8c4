#pragma once

/// Semi-implicit Euler-Maruyama integration of
///   du - Delta u dt + F'(u) dt = g dt + B(J(u)) dW,   Neumann boundary,
/// with the convex-concave split F'(r) = phi(r) - kappa r: the monotone part
/// (-Delta, phi) is implicit, the linear concave part, g and the noise are
/// explicit (left endpoint). Each step solves
///   w - dt Delta_h w + dt phi(w) = u + dt (kappa u + g) + sum_k h_k(J(u)) dW_k
/// by damped Newton with a preconditioned CG inner solve.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sac/grid.hpp"
#include "sac/linalg.hpp"
#include "sac/noise.hpp"
#include "sac/potential.hpp"
#include "sac/rng.hpp"

namespace sac {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepperConfig {
  double dt = 1e-3;
  double t_end = 0.5;
  double outer_newton_tol = 1e-10;
  int outer_newton_max = 50;
  double linear_tol = 1e-12;
  int linear_max = 5000;
  std::vector<int> gauge_orders{2, 3};

  void validate() const {
    if (!(dt > 0.0) || !(t_end > 0.0)) throw DomainError("stepper: dt and t_end must be positive");
    if (dt > t_end * (1.0 + 1e-12)) throw DomainError("stepper: dt must not exceed t_end");
    if (!(outer_newton_tol > 0.0) || !(linear_tol > 0.0)) throw DomainError("stepper: tolerances must be positive");
    if (outer_newton_max < 1 || linear_max < 1) throw DomainError("stepper: iteration limits must be >= 1");
    for (int n : gauge_orders)
      if (n < 2) throw DomainError("stepper.gauge_orders: orders must be >= 2");
  }

  /// ceil(t_end / dt), treating ratios within 1e-9 of an integer as exact.
  int steps() const {
    const double ratio = t_end / dt;
    const double nearest = std::round(ratio);
    if (std::abs(ratio - nearest) <= 1e-9 * std::max(1.0, nearest)) return static_cast<int>(nearest);
    return static_cast<int>(std::ceil(ratio));
  }
};

/// Value, slope and primitive of the monotone part at one point, plus the
/// argument at which the noise coefficients are evaluated.
struct MonotonePoint {
  double phi = 0.0;
  double phi_prime = 0.0;
  double primitive = 0.0;
  double noise_arg = 0.0;
};

/// F'(r) = phi(r) - kappa r,  F(r) = offset + primitive(r) - kappa r^2 / 2.
template <class N>
concept Nonlinearity = requires(const N& n, double r) {
  { n.evaluate(r) } -> std::same_as<MonotonePoint>;
  { n.concave_rate() } -> std::convertible_to<double>;
  { n.offset() } -> std::convertible_to<double>;
};

/// Yosida-regularized logarithmic potential: phi = beta_lambda, kappa = 2c;
/// the noise acts through J_lambda.
struct RegularizedLogarithmic {
  PotentialParams params;
  YosidaLevel level;

  MonotonePoint evaluate(double r) const {
    const ResolventPoint j = resolvent_point(level, r);
    const double inv_beta_prime = 0.5 * j.gap * (2.0 - j.gap);
    return {j.beta, 1.0 / (inv_beta_prime + level.lambda),
            detail::beta_hat_dual(j.beta) + 0.5 * level.lambda * j.beta * j.beta, j.value};
  }
  double concave_rate() const { return 2.0 * params.c; }
  double offset() const { return params.K; }
};

/// (1 - r^2)^2 / 4 = 1/4 + r^4/4 - r^2/2; noise coefficients see u itself.
struct PolynomialWell {
  MonotonePoint evaluate(double r) const { return {r * r * r, 3.0 * r * r, 0.25 * r * r * r * r, r}; }
  double concave_rate() const { return 1.0; }
  double offset() const { return 0.25; }
};

/// Pure diffusion (heat equation plus forcing and noise).
struct NoPotential {
  MonotonePoint evaluate(double r) const { return {0.0, 0.0, 0.0, r}; }
  double concave_rate() const { return 0.0; }
  double offset() const { return 0.0; }
};

/// Per-step increments keyed by (seed, replicate, step); shared by every run
/// with the same key regardless of lambda or grid.
struct KeyedIncrements {
  std::uint64_t seed = 0;
  std::uint32_t replicate = 0;
  NoiseSpec spec;
  double dt = 1e-3;

  NoiseIncrement operator()(int step) const {
    return sample_increments({seed, replicate, static_cast<std::uint32_t>(step)}, spec, dt);
  }
};

/// Coarse increments built by summing `factor` consecutive fine increments,
/// so a run at dt * factor follows the same Brownian path.
template <class Fine>
struct AggregatedIncrements {
  Fine fine;
  int factor = 2;

  NoiseIncrement operator()(int step) const {
    NoiseIncrement sum = fine(step * factor);
    for (int j = 1; j < factor; ++j) {
      const NoiseIncrement part = fine(step * factor + j);
      for (std::size_t k = 0; k < sum.dW.size(); ++k) sum.dW[k] += part.dW[k];
    }
    return sum;
  }
};

/// One stochastic path. The running integrals are left-endpoint sums and
/// are exactly what the weak-form defect needs.
struct TrajectoryState {
  double t = 0.0;
  Field u;
  int step_index = 0;
  std::uint32_t replicate = 0;

  Field u0;
  Field int_u;                // sum dt u_m
  Field int_fprime;           // sum dt F'(u_m)
  Field int_g;                // sum dt g_m
  Field stochastic_integral;  // sum B(J(u_m)) dW_m
  double running_sup_norm = 0.0;
  double dirichlet_integral = 0.0;  // sum dt ||grad u_m||^2
  StreamHash increment_hash;

  static TrajectoryState start(const Field& u0, std::uint32_t replicate = 0) {
    TrajectoryState s;
    s.u = u0;
    s.u0 = u0;
    s.replicate = replicate;
    s.int_u = Field(u0.size());
    s.int_fprime = Field(u0.size());
    s.int_g = Field(u0.size());
    s.stochastic_integral = Field(u0.size());
    for (double v : u0) s.running_sup_norm = std::max(s.running_sup_norm, std::abs(v));
    return s;
  }
};

struct SolveStats {
  int newton_iterations = 0;
  int linear_iterations = 0;
  double residual = 0.0;
};

/// Solves w - dt Delta_h w + dt phi(w) = rhs. `w` holds the initial iterate.
template <Nonlinearity N>
SolveStats implicit_solve_into(const Grid& g, const N& nl, const Field& rhs, double dt, const StepperConfig& cfg,
                               Field& w) {
  detail::require_size(g, rhs, "implicit_solve");
  const std::size_t n = rhs.size();
  const Field lap_diag = neg_laplacian_diagonal(g);
  std::vector<double> slope(n), residual(n), trial_residual(n), lap(n), delta(n), trial(n);

  auto compute_residual = [&](std::span<const double> x, std::vector<double>& res, std::vector<double>* slopes) {
    laplacian_into(g, x, lap);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const MonotonePoint p = nl.evaluate(x[i]);
      res[i] = x[i] - dt * lap[i] + dt * p.phi - rhs[i];
      if (slopes) (*slopes)[i] = p.phi_prime;
      sq += res[i] * res[i];
    }
    return sq;
  };
  auto sup = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  };

  SolveStats stats;
  double res_sq = compute_residual(w.span(), residual, &slope);
  stats.residual = sup(residual);
  while (stats.residual > cfg.outer_newton_tol) {
    if (stats.newton_iterations >= cfg.outer_newton_max) {
      std::ostringstream os;
      os << "implicit solve did not converge in " << cfg.outer_newton_max << " Newton iterations (residual "
         << stats.residual << ", dt " << dt << ")";
      throw ConvergenceError(os.str());
    }
    ++stats.newton_iterations;
    auto apply = [&](std::span<const double> p, std::span<double> out) {
      laplacian_into(g, p, out);
      for (std::size_t i = 0; i < n; ++i) out[i] = p[i] - dt * out[i] + dt * slope[i] * p[i];
    };
    auto jacobi = [&](std::span<const double> r, std::span<double> z) {
      for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / (1.0 + dt * lap_diag[i] + dt * slope[i]);
    };
    for (std::size_t i = 0; i < n; ++i) trial[i] = -residual[i];
    std::fill(delta.begin(), delta.end(), 0.0);
    const CgResult cg = conjugate_gradient(apply, jacobi, trial, delta, cfg.linear_tol, cfg.linear_max);
    stats.linear_iterations += cg.iterations;
    if (!cg.converged && !(cg.relative_residual < 1e-6)) {
      std::ostringstream os;
      os << "implicit solve: linear solve stagnated at relative residual " << cg.relative_residual;
      throw ConvergenceError(os.str());
    }
    // Armijo backtracking on ||R||_2^2; the Newton direction is a descent direction for it.
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = w[i] + alpha * delta[i];
      const double trial_sq = compute_residual(trial, trial_residual, nullptr);
      if (trial_sq <= (1.0 - 1e-4 * alpha) * res_sq) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      std::ostringstream os;
      os << "implicit solve: line search failed at residual " << stats.residual;
      throw ConvergenceError(os.str());
    }
    for (std::size_t i = 0; i < n; ++i) w[i] = trial[i];
    res_sq = compute_residual(w.span(), residual, &slope);
    stats.residual = sup(residual);
  }
  return stats;
}

template <Nonlinearity N>
Field implicit_solve(const Grid& g, const N& nl, const Field& rhs, double dt, const StepperConfig& cfg) {
  Field w = rhs;
  implicit_solve_into(g, nl, rhs, dt, cfg, w);
  return w;
}

/// Regularized logarithmic case: w - dt Delta_h w + dt beta_lambda(w) = rhs.
inline Field implicit_solve(const Grid& g, const PotentialParams& params, const YosidaLevel& level, const Field& rhs,
                            double dt, const StepperConfig& cfg) {
  return implicit_solve(g, RegularizedLogarithmic{params, level}, rhs, dt, cfg);
}

// ---------------------------------------------------------------------------
// Path statistics: left-endpoint time integrals and sups over output steps.

struct GaugeSeries {
  int order = 2;
  std::vector<double> mass;   // integral over D of G_n(u(t_m)), m = 0..M
  double integral = 0.0;      // sum dt integral over D of G_n(u_m)
  double prime_integral = 0.0;  // sum dt integral over D of |G_n'(u_m)|
};

struct PathStats {
  double sup_h_sq = 0.0;
  double sup_grad_sq = 0.0;
  double int_grad_sq = 0.0;
  double int_fprime_sq = 0.0;
  double int_beta_sq = 0.0;  // monotone part: beta_lambda for the log potential
  double int_lap_sq = 0.0;
  std::vector<GaugeSeries> gauges;
  std::int64_t excursion_samples = 0;
  std::int64_t total_samples = 0;
  double first_excursion_time = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t increment_hash = 0;

  double excursion_fraction() const {
    return total_samples == 0 ? 0.0 : static_cast<double>(excursion_samples) / static_cast<double>(total_samples);
  }
};

class PathRecorder {
 public:
  PathRecorder(const Grid& g, const std::vector<int>& gauge_orders) : grid_(&g), lap_(g.size()) {
    for (int n : gauge_orders) stats_.gauges.push_back({n, {}, 0.0, 0.0});
  }

  /// Records state u at time t. `weight` is dt for left endpoints of a step
  /// and 0 for the final point (sups and series only).
  void observe(const Field& u, std::span<const MonotonePoint> points, double kappa, double t, double weight) {
    const Grid& g = *grid_;
    const double vol = g.cell_volume();
    const Norms nm = norms(g, u);
    stats_.sup_h_sq = std::max(stats_.sup_h_sq, nm.h_norm_sq);
    stats_.sup_grad_sq = std::max(stats_.sup_grad_sq, nm.grad_norm_sq);
    bool excursion = false;
    for (double v : u) excursion |= !(std::abs(v) < 1.0);
    if (excursion && std::isnan(stats_.first_excursion_time)) stats_.first_excursion_time = t;

    for (GaugeSeries& gs : stats_.gauges) {
      const GaugeOrder order(gs.order);
      double mass = 0.0;
      double prime = 0.0;
      for (double v : u) {
        if (!(std::abs(v) < 1.0)) continue;
        const GaugeValues gv = gauge_eval(order, v);
        mass += gv.G;
        prime += std::abs(gv.G_prime);
      }
      gs.mass.push_back(mass * vol);
      gs.integral += weight * mass * vol;
      gs.prime_integral += weight * prime * vol;
    }
    for (double v : u) stats_.excursion_samples += !(std::abs(v) < 1.0);
    stats_.total_samples += static_cast<std::int64_t>(u.size());

    if (weight == 0.0) return;
    double fprime_sq = 0.0;
    double beta_sq = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double fp = points[i].phi - kappa * u[i];
      fprime_sq += fp * fp;
      beta_sq += points[i].phi * points[i].phi;
    }
    laplacian_into(g, u.span(), lap_);
    double lap_sq = 0.0;
    for (double v : lap_) lap_sq += v * v;
    stats_.int_grad_sq += weight * nm.grad_norm_sq;
    stats_.int_fprime_sq += weight * fprime_sq * vol;
    stats_.int_beta_sq += weight * beta_sq * vol;
    stats_.int_lap_sq += weight * lap_sq * vol;
  }

  PathStats finish(std::uint64_t increment_hash) {
    stats_.increment_hash = increment_hash;
    return stats_;
  }

 private:
  const Grid* grid_;
  std::vector<double> lap_;
  PathStats stats_;
};

// ---------------------------------------------------------------------------

/// Pointwise monotone-part evaluation of a field.
template <Nonlinearity N>
void evaluate_points(const N& nl, const Field& u, std::vector<MonotonePoint>& out) {
  out.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = nl.evaluate(u[i]);
}

/// Advances `state` by one step with a given increment. When `recorder` is
/// set, the left endpoint u_m is recorded with weight dt.
template <Nonlinearity N>
void advance(TrajectoryState& state, const Grid& g, const N& nl, const NoiseSpec& spec, const Field& g_force,
             const NoiseIncrement& inc, const StepperConfig& cfg, PathRecorder* recorder = nullptr) {
  const double dt = cfg.dt;
  const double kappa = nl.concave_rate();
  const std::size_t n = state.u.size();
  detail::require_size(g, state.u, "step");
  detail::require_size(g, g_force, "step");

  std::vector<MonotonePoint> points;
  evaluate_points(nl, state.u, points);
  if (recorder) recorder->observe(state.u, points, kappa, state.t, dt);

  Field noise(n);
  if (spec.modes > 0) {
    if (inc.dW.size() != static_cast<std::size_t>(spec.modes))
      throw std::invalid_argument("step: increment length differs from mode count");
    const NoiseCoefficients coeffs(spec);
    std::vector<double> scratch;
    for (std::size_t i = 0; i < n; ++i) {
      const double arg = points[i].noise_arg;
      if (!(std::abs(arg) <= 1.0)) {
        std::ostringstream os;
        os << "diffusion coefficient undefined outside [-1, 1]: u = " << arg;
        throw DomainError(os.str());
      }
      noise[i] = coeffs.combine(arg, inc.dW, scratch);
    }
    for (double d : inc.dW) state.increment_hash.update(d);
  }

  Field rhs(n);
  for (std::size_t i = 0; i < n; ++i) rhs[i] = state.u[i] + dt * (kappa * state.u[i] + g_force[i]) + noise[i];

  state.dirichlet_integral += dt * grad_norm_sq(g, state.u.span());
  for (std::size_t i = 0; i < n; ++i) {
    state.int_u[i] += dt * state.u[i];
    state.int_fprime[i] += dt * (points[i].phi - kappa * state.u[i]);
    state.int_g[i] += dt * g_force[i];
    state.stochastic_integral[i] += noise[i];
  }

  Field w = state.u;
  implicit_solve_into(g, nl, rhs, dt, cfg, w);
  state.u = std::move(w);
  ++state.step_index;
  state.t = state.step_index * dt;
  for (double v : state.u) state.running_sup_norm = std::max(state.running_sup_norm, std::abs(v));
}

/// One step of the regularized logarithmic problem with keyed increments.
inline TrajectoryState step(TrajectoryState state, const Grid& g, const PotentialParams& params,
                            const YosidaLevel& level, const NoiseSpec& spec, const Field& g_force,
                            const StepperConfig& cfg, std::uint64_t seed) {
  const KeyedIncrements source{seed, state.replicate, spec, cfg.dt};
  advance(state, g, RegularizedLogarithmic{params, level}, spec, g_force, source(state.step_index), cfg);
  return state;
}

/// Time-constant forcing.
struct ConstantForcing {
  Field g;
  const Field& operator()(int /*step*/, double /*t*/) const { return g; }
};

struct SimulationResult {
  TrajectoryState final_state;
  PathStats stats;
};

/// Runs ceil(t_end/dt) steps from u0. `on_state` (optional) sees every state
/// including the initial one.
template <Nonlinearity N, class Forcing, class Increments>
SimulationResult simulate_with(const Field& u0, const Forcing& forcing, const N& nl, const NoiseSpec& spec,
                               const StepperConfig& cfg, const Grid& g, const Increments& increments,
                               std::uint32_t replicate = 0,
                               const std::function<void(const TrajectoryState&)>& on_state = {}) {
  cfg.validate();
  detail::require_size(g, u0, "simulate");
  TrajectoryState state = TrajectoryState::start(u0, replicate);
  PathRecorder recorder(g, cfg.gauge_orders);
  if (on_state) on_state(state);
  const int steps = cfg.steps();
  for (int m = 0; m < steps; ++m) {
    try {
      advance(state, g, nl, spec, forcing(m, state.t), increments(m), cfg, &recorder);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "step " << m << " (t=" << state.t << "): " << e.what();
      throw SimulationError(os.str());
    }
    if (on_state) on_state(state);
  }
  std::vector<MonotonePoint> points;
  evaluate_points(nl, state.u, points);
  recorder.observe(state.u, points, nl.concave_rate(), state.t, 0.0);
  return {state, recorder.finish(state.increment_hash.value())};
}

/// Regularized logarithmic problem driven by keyed increments.
template <class Forcing>
SimulationResult simulate(const Field& u0, const Forcing& forcing, const YosidaLevel& level, const NoiseSpec& spec,
                          const StepperConfig& cfg, const Grid& g, const PotentialParams& params, std::uint64_t seed,
                          std::uint32_t replicate = 0,
                          const std::function<void(const TrajectoryState&)>& on_state = {}) {
  return simulate_with(u0, forcing, RegularizedLogarithmic{params, level}, spec, cfg, g,
                       KeyedIncrements{seed, replicate, spec, cfg.dt}, replicate, on_state);
}

// ---------------------------------------------------------------------------
// Diagnostics.

/// Weak-form defect for test field v:
///   <u(t),v> + <grad int u, grad v> + <int F'(u), v> - <u0,v> - <int g, v> - <int B dW, v>.
inline double weak_residual_check(const Grid& g, const TrajectoryState& s, const Field& v) {
  const Field lap_int = laplacian_neumann(g, s.int_u);
  const double value = inner(g, s.u, v) - inner(g, lap_int, v) + inner(g, s.int_fprime, v) - inner(g, s.u0, v) -
                       inner(g, s.int_g, v) - inner(g, s.stochastic_integral, v);
  return std::abs(value);
}

struct GateauxErrors {
  double d1_err = 0.0;
  double d2_err = 0.0;
};

/// Phi_lambda(u) = sum F_lambda(u) h^d.
inline double regularized_bulk(const Grid& g, const PotentialParams& params, const YosidaLevel& level,
                               const Field& u) {
  double s = 0.0;
  for (double v : u) s += regularized_potential_eval(params, level, v).F;
  return s * g.cell_volume();
}

/// Central-difference check of DPhi_lambda(u; h) = <F'_lambda(u), h> and
/// D^2 Phi_lambda(u; h, k) = <F''_lambda(u) h, k>. Default eps = 1e-5 (1 + |u|_inf).
inline GateauxErrors gateaux_check(const Grid& g, const PotentialParams& params, const YosidaLevel& level,
                                   const Field& u, const Field& h_dir, const Field& k_dir,
                                   std::optional<double> eps_override = std::nullopt) {
  const double eps = eps_override.value_or(1e-5 * (1.0 + norms(g, u).sup_norm));
  auto shifted = [&](const Field& dir, double a) {
    Field out = u;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * dir[i];
    return out;
  };
  auto first_form = [&](const Field& at, const Field& dir) {
    double s = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) s += regularized_potential_eval(params, level, at[i]).F1 * dir[i];
    return s * g.cell_volume();
  };
  double second = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    second += regularized_potential_eval(params, level, u[i]).F2 * h_dir[i] * k_dir[i];
  second *= g.cell_volume();

  const double fd1 =
      (regularized_bulk(g, params, level, shifted(h_dir, eps)) - regularized_bulk(g, params, level, shifted(h_dir, -eps))) /
      (2.0 * eps);
  const double fd2 = (first_form(shifted(k_dir, eps), h_dir) - first_form(shifted(k_dir, -eps), h_dir)) / (2.0 * eps);
  return {std::abs(fd1 - first_form(u, h_dir)), std::abs(fd2 - second)};
}

}  // namespace sac
