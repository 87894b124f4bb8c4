#pragma once

// Monte Carlo studies. Every expectation is an empirical mean over M
// independent replicates. Coupled runs (several lambda levels, or perturbed
// data) are advanced in lockstep from one increment per step, so they are
// driven by the same Brownian path by construction.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "json.hpp"
#include "sac/grid.hpp"
#include "sac/noise.hpp"
#include "sac/potential.hpp"
#include "sac/stepper.hpp"

namespace sac {

class StudyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::string num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration and reports

struct StudyThresholds {
  double uniform_band = 1.2;
  double cauchy_ratio = 0.75;
  double cauchy_order = 0.8;
  double dependence_spread = 0.5;
  double strong_band = 1.2;
  double derivative_band = 1.3;
  double excursion_limit = 0.01;
  double temporal_order = 0.8;
  double spatial_order = 1.6;
};

struct EnsembleConfig {
  int replicates = 64;
  std::uint64_t seed = 20240917;
  std::vector<double> lambda_levels{0.2, 0.1, 0.05, 0.025};
  double yosida_newton_tol = 1e-12;
  int yosida_newton_max = 200;
  Grid grid{1.0, 128};
  StepperConfig stepper;
  NoiseSpec noise;
  PotentialParams potential = PotentialParams::logarithmic(2.0);
  Field u0;
  Field forcing;
  int threads = 1;  // <= 0 selects the hardware concurrency
  std::uint64_t config_hash = 0;
  StudyThresholds thresholds;

  YosidaLevel level(double lambda) const { return YosidaLevel(lambda, yosida_newton_tol, yosida_newton_max); }

  void validate() const {
    if (replicates < 2) throw DomainError("ensemble.replicates must be >= 2");
    if (lambda_levels.empty()) throw DomainError("ensemble.lambda_levels must not be empty");
    for (std::size_t i = 0; i < lambda_levels.size(); ++i) {
      (void)level(lambda_levels[i]);
      if (i > 0 && !(lambda_levels[i] < lambda_levels[i - 1]))
        throw DomainError("ensemble.lambda_levels must be strictly decreasing");
    }
    if (potential.kind != PotentialKind::logarithmic)
      throw DomainError("ensemble: studies use the regularized logarithmic potential");
    stepper.validate();
    noise.validate();
    detail::require_size(grid, u0, "ensemble.u0");
    detail::require_size(grid, forcing, "ensemble.forcing");
    for (double v : u0)
      if (!(std::abs(v) < 1.0)) throw DomainError("ensemble.u0 must satisfy |u0| < 1 everywhere");
    for (double v : forcing)
      if (!std::isfinite(v)) throw DomainError("ensemble.forcing must be finite");
  }

  /// 1-D, L = 1, N = 128, dt = 1e-3, T = 0.5, c = 2, sine noise (s = 2,
  /// amplitude 0.5, 16 modes), M = 64, u0 = 0.5 cos(pi x), g = 0.
  static EnsembleConfig reference() {
    EnsembleConfig cfg;
    cfg.u0 = sample(cfg.grid, [](double x, double) { return 0.5 * std::cos(std::numbers::pi * x); });
    cfg.forcing = Field(cfg.grid);
    return cfg;
  }
};

struct EstimateRow {
  std::string quantity;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  double stderr_ = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  int samples = 0;  // 0 for derived (non-sample) quantities
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct EstimateReport {
  std::string study;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  int replicates = 0;
  double wall_seconds = 0.0;
  std::vector<EstimateRow> rows;
  std::vector<Check> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }

  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const Check& c : checks)
      if (!c.passed) out.push_back(c.name + ": " + c.detail);
    return out;
  }

  const EstimateRow* find(const std::string& quantity, std::optional<double> lambda = std::nullopt) const {
    for (const EstimateRow& r : rows)
      if (r.quantity == quantity && (!lambda || r.lambda == *lambda)) return &r;
    return nullptr;
  }

  void add_check(std::string name, bool ok, std::string detail) {
    checks.push_back({std::move(name), ok, std::move(detail)});
  }

  /// One row per (quantity, lambda); full round-trip precision, NaN as empty.
  std::string to_csv() const {
    auto cell = [](double v) { return std::isnan(v) ? std::string() : detail::num(v, 17); };
    std::ostringstream os;
    os << "study,quantity,lambda,mean,stderr,ci_low,ci_high,samples\n";
    for (const EstimateRow& r : rows) {
      os << study << ',' << r.quantity << ',' << cell(r.lambda) << ',' << cell(r.mean) << ',' << cell(r.stderr_)
         << ',' << cell(r.ci_low) << ',' << cell(r.ci_high) << ',' << r.samples << '\n';
    }
    return os.str();
  }

  /// Deterministic summary (no timings).
  nlohmann::ordered_json summary() const {
    nlohmann::ordered_json j;
    j["study"] = study;
    j["config_hash"] = hex_hash();
    j["seed"] = seed;
    j["replicates"] = replicates;
    j["passed"] = passed();
    j["checks"] = nlohmann::ordered_json::array();
    for (const Check& c : checks) j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return j;
  }

  std::string hex_hash() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash));
    return buf;
  }
};

/// Mean, standard error and normal-approximation 95% interval.
inline EstimateRow estimate(std::string quantity, double lambda, const std::vector<double>& samples) {
  EstimateRow r;
  r.quantity = std::move(quantity);
  r.lambda = lambda;
  r.samples = static_cast<int>(samples.size());
  const double n = static_cast<double>(samples.size());
  if (samples.empty()) {
    r.mean = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  double sum = 0.0;
  for (double v : samples) sum += v;
  r.mean = sum / n;
  if (samples.size() >= 2) {
    double ss = 0.0;
    for (double v : samples) ss += (v - r.mean) * (v - r.mean);
    r.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    r.ci_low = r.mean - 1.959963984540054 * r.stderr_;
    r.ci_high = r.mean + 1.959963984540054 * r.stderr_;
  }
  return r;
}

inline EstimateRow derived(std::string quantity, double lambda, double value) {
  EstimateRow r;
  r.quantity = std::move(quantity);
  r.lambda = lambda;
  r.mean = value;
  return r;
}

// ---------------------------------------------------------------------------
// Worker pool over replicates

inline int resolve_threads(int requested, int work) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(n, 1, std::max(1, work));
}

/// Runs fn(r) for r = 0..count-1 on a pool; results come back in replicate
/// order. If several replicates fail, the lowest replicate index is reported.
template <class T, class Fn>
std::vector<T> run_replicates(int count, int threads, const std::string& study, Fn&& fn) {
  std::vector<std::optional<T>> slots(static_cast<std::size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= count) return;
      try {
        slots[r].emplace(fn(r));
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n = resolve_threads(threads, count);
    for (int i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
  }
  for (int r = 0; r < count; ++r) {
    if (!errors[r]) continue;
    try {
      std::rethrow_exception(errors[r]);
    } catch (const std::exception& e) {
      throw StudyError("study " + study + ", replicate " + std::to_string(r) + ", " + e.what());
    }
  }
  std::vector<T> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Lockstep coupled runs

struct CoupledMember {
  YosidaLevel level;
  Field u0;
  Field forcing;
};

struct MemberPair {
  std::size_t first = 0;
  std::size_t second = 0;
};

struct PairDifference {
  double sup_h_sq = 0.0;
  double int_h_sq = 0.0;
  double int_grad_sq = 0.0;

  double cauchy() const { return sup_h_sq + int_grad_sq; }
  double int_v_sq() const { return int_h_sq + int_grad_sq; }
};

struct CoupledPath {
  std::vector<PathStats> stats;
  std::vector<PairDifference> pairs;
  std::vector<std::uint64_t> increment_hashes;

  bool coupled() const {
    return std::all_of(increment_hashes.begin(), increment_hashes.end(),
                       [&](std::uint64_t h) { return h == increment_hashes.front(); });
  }
};

/// Advances all members from one shared increment per step.
inline CoupledPath run_coupled(const Grid& g, const PotentialParams& params, const NoiseSpec& spec,
                               const StepperConfig& cfg, const std::vector<CoupledMember>& members,
                               const std::vector<MemberPair>& pairs, std::uint64_t seed, std::uint32_t replicate) {
  cfg.validate();
  std::vector<TrajectoryState> states;
  std::vector<PathRecorder> recorders;
  std::vector<RegularizedLogarithmic> nls;
  for (const CoupledMember& m : members) {
    detail::require_size(g, m.u0, "coupled member u0");
    detail::require_size(g, m.forcing, "coupled member forcing");
    states.push_back(TrajectoryState::start(m.u0, replicate));
    recorders.emplace_back(g, cfg.gauge_orders);
    nls.push_back({params, m.level});
  }
  CoupledPath out;
  out.pairs.resize(pairs.size());
  auto observe_pairs = [&](double weight) {
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const Norms n = norms(g, states[pairs[p].first].u - states[pairs[p].second].u);
      PairDifference& d = out.pairs[p];
      d.sup_h_sq = std::max(d.sup_h_sq, n.h_norm_sq);
      d.int_h_sq += weight * n.h_norm_sq;
      d.int_grad_sq += weight * n.grad_norm_sq;
    }
  };

  const KeyedIncrements source{seed, replicate, spec, cfg.dt};
  const int steps = cfg.steps();
  for (int m = 0; m < steps; ++m) {
    observe_pairs(cfg.dt);
    const NoiseIncrement inc = source(m);
    for (std::size_t i = 0; i < members.size(); ++i) {
      try {
        advance(states[i], g, nls[i], spec, members[i].forcing, inc, cfg, &recorders[i]);
      } catch (const std::exception& e) {
        std::ostringstream os;
        os << "lambda " << members[i].level.lambda << ", step " << m << " (t=" << states[i].t << "): " << e.what();
        throw SimulationError(os.str());
      }
    }
  }
  observe_pairs(0.0);
  std::vector<MonotonePoint> points;
  for (std::size_t i = 0; i < members.size(); ++i) {
    evaluate_points(nls[i], states[i].u, points);
    recorders[i].observe(states[i].u, points, nls[i].concave_rate(), states[i].t, 0.0);
    out.stats.push_back(recorders[i].finish(states[i].increment_hash.value()));
    out.increment_hashes.push_back(states[i].increment_hash.value());
  }
  return out;
}

/// All lambda levels of a config run in lockstep; pairs are consecutive levels.
struct LambdaEnsemble {
  EnsembleConfig config;
  std::vector<CoupledPath> paths;
  double wall_seconds = 0.0;
};

inline LambdaEnsemble run_lambda_ensemble(const EnsembleConfig& cfg, const std::string& study = "ensemble") {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<CoupledMember> members;
  for (double lam : cfg.lambda_levels) members.push_back({cfg.level(lam), cfg.u0, cfg.forcing});
  std::vector<MemberPair> pairs;
  for (std::size_t i = 0; i + 1 < members.size(); ++i) pairs.push_back({i, i + 1});
  LambdaEnsemble ens;
  ens.config = cfg;
  ens.paths = run_replicates<CoupledPath>(cfg.replicates, cfg.threads, study, [&](int r) {
    return run_coupled(cfg.grid, cfg.potential, cfg.noise, cfg.stepper, members, pairs, cfg.seed,
                       static_cast<std::uint32_t>(r));
  });
  ens.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return ens;
}

namespace detail {
inline EstimateReport new_report(const std::string& study, const EnsembleConfig& cfg) {
  EstimateReport rep;
  rep.study = study;
  rep.config_hash = cfg.config_hash;
  rep.seed = cfg.seed;
  rep.replicates = cfg.replicates;
  return rep;
}

template <class Get>
std::vector<double> collect(const std::vector<CoupledPath>& paths, Get&& get) {
  std::vector<double> v;
  v.reserve(paths.size());
  for (const CoupledPath& p : paths) v.push_back(get(p));
  return v;
}

// max/min of the row means of `quantity` across lambda levels; 1 when all are zero.
inline double band_ratio(const std::vector<const EstimateRow*>& rows) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const EstimateRow* r : rows) {
    lo = std::min(lo, r->mean);
    hi = std::max(hi, r->mean);
  }
  if (hi == 0.0) return 1.0;
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

inline void add_band_checks(EstimateReport& rep, const std::vector<std::string>& quantities,
                            const std::vector<double>& levels, double band, const std::string& label) {
  for (const std::string& q : quantities) {
    std::vector<const EstimateRow*> rows;
    for (double lam : levels) rows.push_back(rep.find(q, lam));
    const double ratio = band_ratio(rows);
    rep.add_check(label + ":" + q, std::isfinite(ratio) && ratio <= band,
                  "max/min across lambda = " + num(ratio) + " (limit " + num(band) + ")");
    bool degenerate = false;
    for (const EstimateRow* r : rows) degenerate |= !(r->stderr_ > 0.0) && r->mean != 0.0;
    rep.add_check("ci_nondegenerate:" + q, !degenerate, degenerate ? "zero-width interval" : "ok");
  }
}

inline void add_coupling_check(EstimateReport& rep, const std::vector<CoupledPath>& paths) {
  std::size_t broken = 0;
  for (const CoupledPath& p : paths) broken += !p.coupled();
  rep.add_check("coupling", broken == 0,
                broken == 0 ? "identical increment hashes in every replicate"
                            : std::to_string(broken) + " replicates with differing increment streams");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Studies

/// E sup ||u||^2, E int ||grad u||^2, E int ||F'_lambda(u)||^2, E int ||beta_lambda(u)||^2 per level.
inline EstimateReport uniform_bounds_study(const LambdaEnsemble& ens) {
  const EnsembleConfig& cfg = ens.config;
  EstimateReport rep = detail::new_report("uniform", cfg);
  rep.wall_seconds = ens.wall_seconds;
  const std::vector<std::string> quantities{"sup_h_sq", "int_grad_sq", "int_fprime_sq", "int_beta_sq"};
  for (std::size_t l = 0; l < cfg.lambda_levels.size(); ++l) {
    const double lam = cfg.lambda_levels[l];
    auto stat = [&](auto member) { return detail::collect(ens.paths, [&](const CoupledPath& p) { return member(p.stats[l]); }); };
    rep.rows.push_back(estimate("sup_h_sq", lam, stat([](const PathStats& s) { return s.sup_h_sq; })));
    rep.rows.push_back(estimate("int_grad_sq", lam, stat([](const PathStats& s) { return s.int_grad_sq; })));
    rep.rows.push_back(estimate("int_fprime_sq", lam, stat([](const PathStats& s) { return s.int_fprime_sq; })));
    rep.rows.push_back(estimate("int_beta_sq", lam, stat([](const PathStats& s) { return s.int_beta_sq; })));
    rep.rows.push_back(
        estimate("excursion_fraction", lam, stat([](const PathStats& s) { return s.excursion_fraction(); })));
  }
  detail::add_band_checks(rep, quantities, cfg.lambda_levels, cfg.thresholds.uniform_band, "band");
  return rep;
}

inline EstimateReport uniform_bounds_study(const EnsembleConfig& cfg) {
  return uniform_bounds_study(run_lambda_ensemble(cfg, "uniform"));
}

/// Delta(lambda) = E sup ||u_l - u_next||^2 + E int ||grad (u_l - u_next)||^2
/// for consecutive levels, with the observed order log2(Delta_i / Delta_{i+1}).
inline EstimateReport cauchy_study(const LambdaEnsemble& ens) {
  const EnsembleConfig& cfg = ens.config;
  if (cfg.lambda_levels.size() < 3) throw DomainError("cauchy study needs at least 3 lambda levels");
  EstimateReport rep = detail::new_report("cauchy", cfg);
  rep.wall_seconds = ens.wall_seconds;
  const std::size_t n_pairs = cfg.lambda_levels.size() - 1;
  std::vector<double> delta(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const double lam = cfg.lambda_levels[p];
    EstimateRow row = estimate("cauchy_delta", lam,
                               detail::collect(ens.paths, [&](const CoupledPath& c) { return c.pairs[p].cauchy(); }));
    delta[p] = row.mean;
    rep.rows.push_back(row);
    rep.rows.push_back(estimate("cauchy_sup_h_sq", lam, detail::collect(ens.paths, [&](const CoupledPath& c) {
                                  return c.pairs[p].sup_h_sq;
                                })));
    rep.rows.push_back(estimate("cauchy_int_grad_sq", lam, detail::collect(ens.paths, [&](const CoupledPath& c) {
                                  return c.pairs[p].int_grad_sq;
                                })));
  }
  for (std::size_t p = 0; p + 1 < n_pairs; ++p) {
    const double lam = cfg.lambda_levels[p + 1];
    const double ratio = delta[p + 1] / delta[p];
    const double order = std::log2(delta[p] / delta[p + 1]);
    rep.rows.push_back(derived("cauchy_ratio", lam, ratio));
    rep.rows.push_back(derived("cauchy_order", lam, order));
    const std::string at = "@" + detail::num(lam);
    rep.add_check("strictly_decreasing" + at, delta[p + 1] < delta[p],
                  "Delta = " + detail::num(delta[p + 1]) + " after " + detail::num(delta[p]));
    rep.add_check("ratio" + at, ratio <= cfg.thresholds.cauchy_ratio,
                  "ratio " + detail::num(ratio) + " (limit " + detail::num(cfg.thresholds.cauchy_ratio) + ")");
    rep.add_check("order" + at, order >= cfg.thresholds.cauchy_order,
                  "order " + detail::num(order) + " (limit " + detail::num(cfg.thresholds.cauchy_order) + ")");
  }
  detail::add_coupling_check(rep, ens.paths);
  return rep;
}

inline EstimateReport cauchy_study(const EnsembleConfig& cfg) { return cauchy_study(run_lambda_ensemble(cfg, "cauchy")); }

/// E sup ||grad u||^2 and E int ||Delta_h u||^2 per level.
inline EstimateReport strong_solution_study(const LambdaEnsemble& ens) {
  const EnsembleConfig& cfg = ens.config;
  EstimateReport rep = detail::new_report("strong", cfg);
  rep.wall_seconds = ens.wall_seconds;
  for (std::size_t l = 0; l < cfg.lambda_levels.size(); ++l) {
    const double lam = cfg.lambda_levels[l];
    rep.rows.push_back(estimate("sup_grad_sq", lam, detail::collect(ens.paths, [&](const CoupledPath& p) {
                                  return p.stats[l].sup_grad_sq;
                                })));
    rep.rows.push_back(estimate("int_lap_sq", lam, detail::collect(ens.paths, [&](const CoupledPath& p) {
                                  return p.stats[l].int_lap_sq;
                                })));
  }
  detail::add_band_checks(rep, {"sup_grad_sq", "int_lap_sq"}, cfg.lambda_levels, cfg.thresholds.strong_band, "band");
  return rep;
}

inline EstimateReport strong_solution_study(const EnsembleConfig& cfg) {
  return strong_solution_study(run_lambda_ensemble(cfg, "strong"));
}

struct Perturbation {
  std::string family;  // rows of one family share a stability check
  double size = 0.0;
  Field du0;
  Field dg;
};

/// delta * cos(pi x / L_x) applied to u0 only and to g only, for
/// delta in {1e-1, 1e-2, 1e-3}.
inline std::vector<Perturbation> default_perturbations(const EnsembleConfig& cfg) {
  const double lx = cfg.grid.extent(0);
  const Field shape = sample(cfg.grid, [&](double x, double) { return std::cos(std::numbers::pi * x / lx); });
  const Field zero(cfg.grid);
  std::vector<Perturbation> out;
  for (const char* family : {"u0", "g"}) {
    for (double d : {1e-1, 1e-2, 1e-3}) {
      const bool on_u0 = std::string(family) == "u0";
      out.push_back({family, d, on_u0 ? d * shape : zero, on_u0 ? zero : d * shape});
    }
  }
  return out;
}

/// Ratio of sqrt(E sup ||du||^2) + sqrt(E int ||du||_V^2) to
/// ||du0||_H + sqrt(int ||dg||_{V*}^2) at the smallest lambda, each
/// perturbed run coupled to the unperturbed one.
inline EstimateReport dependence_study(const EnsembleConfig& cfg, const std::vector<Perturbation>& perturbations) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  EstimateReport rep = detail::new_report("dependence", cfg);
  const double lam = cfg.lambda_levels.back();
  std::vector<CoupledMember> members{{cfg.level(lam), cfg.u0, cfg.forcing}};
  std::vector<MemberPair> pairs;
  for (const Perturbation& p : perturbations) {
    detail::require_size(cfg.grid, p.du0, "perturbation du0");
    detail::require_size(cfg.grid, p.dg, "perturbation dg");
    Field u0 = cfg.u0 + p.du0;
    for (double v : u0)
      if (!(std::abs(v) < 1.0)) throw DomainError("dependence: perturbed u0 leaves (-1, 1)");
    pairs.push_back({0, members.size()});
    members.push_back({cfg.level(lam), std::move(u0), cfg.forcing + p.dg});
  }
  const auto paths = run_replicates<CoupledPath>(cfg.replicates, cfg.threads, "dependence", [&](int r) {
    return run_coupled(cfg.grid, cfg.potential, cfg.noise, cfg.stepper, members, pairs, cfg.seed,
                       static_cast<std::uint32_t>(r));
  });

  const double horizon = cfg.stepper.steps() * cfg.stepper.dt;
  std::vector<std::string> families;
  std::vector<std::vector<double>> family_ratios;
  for (std::size_t i = 0; i < perturbations.size(); ++i) {
    const Perturbation& p = perturbations[i];
    const std::string tag = p.family + "_" + detail::num(p.size);
    const EstimateRow sup = estimate("dependence_sup_h_sq_" + tag, lam,
                                     detail::collect(paths, [&](const CoupledPath& c) { return c.pairs[i].sup_h_sq; }));
    const EstimateRow vint = estimate("dependence_int_v_sq_" + tag, lam, detail::collect(paths, [&](const CoupledPath& c) {
                                        return c.pairs[i].int_v_sq();
                                      }));
    const double lhs = std::sqrt(sup.mean) + std::sqrt(vint.mean);
    const double rhs = std::sqrt(norms(cfg.grid, p.du0).h_norm_sq) + std::sqrt(horizon * dual_norm_sq(cfg.grid, p.dg));
    const double ratio = rhs > 0.0 ? lhs / rhs : std::numeric_limits<double>::quiet_NaN();
    rep.rows.push_back(sup);
    rep.rows.push_back(vint);
    rep.rows.push_back(derived("dependence_lhs_" + tag, lam, lhs));
    rep.rows.push_back(derived("dependence_rhs_" + tag, lam, rhs));
    rep.rows.push_back(derived("dependence_ratio_" + tag, lam, ratio));
    auto it = std::find(families.begin(), families.end(), p.family);
    if (it == families.end()) {
      families.push_back(p.family);
      family_ratios.emplace_back();
      it = families.end() - 1;
    }
    family_ratios[static_cast<std::size_t>(it - families.begin())].push_back(ratio);
  }
  for (std::size_t f = 0; f < families.size(); ++f) {
    const auto& ratios = family_ratios[f];
    double mean = 0.0;
    bool finite = true;
    for (double r : ratios) {
      finite &= std::isfinite(r);
      mean += r;
    }
    mean /= static_cast<double>(ratios.size());
    double worst = 0.0;
    for (double r : ratios) worst = std::max(worst, std::abs(r / mean - 1.0));
    rep.add_check("finite:" + families[f], finite && mean > 0.0, "mean ratio " + detail::num(mean));
    rep.add_check("stable:" + families[f], finite && worst <= cfg.thresholds.dependence_spread,
                  "largest relative deviation from the family mean " + detail::num(worst) + " (limit " +
                      detail::num(cfg.thresholds.dependence_spread) + ")");
  }
  detail::add_coupling_check(rep, paths);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline EstimateReport dependence_study(const EnsembleConfig& cfg) {
  return dependence_study(cfg, default_perturbations(cfg));
}

/// For n in `orders`: poly_flat noise with flatness n + 1, the two smallest
/// lambda levels, sup_t E int G_n(u) and E int int |G_n'(u)| over the
/// non-excursion samples, plus the excursion fraction.
inline EstimateReport derivative_study(const EnsembleConfig& base, const std::vector<int>& orders = {2, 3}) {
  base.validate();
  if (base.lambda_levels.size() < 2) throw DomainError("derivative study needs at least 2 lambda levels");
  for (double v : base.forcing)
    if (!(std::abs(v) <= 1.0)) throw DomainError("derivative study requires |g| <= 1 everywhere");
  const auto start = std::chrono::steady_clock::now();
  EstimateReport rep = detail::new_report("derivative", base);
  const std::vector<double> levels(base.lambda_levels.end() - 2, base.lambda_levels.end());

  for (int n : orders) {
    EnsembleConfig cfg = base;
    cfg.lambda_levels = levels;
    cfg.noise.family = NoiseFamily::poly_flat;
    cfg.noise.flatness = n + 1;
    cfg.stepper.gauge_orders = {n};
    const LambdaEnsemble ens = run_lambda_ensemble(cfg, "derivative");
    const std::string sfx = "_n" + std::to_string(n);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      // Expectation at each output time, then the sup over time.
      const std::size_t times = ens.paths.front().stats[l].gauges.front().mass.size();
      std::size_t arg = 0;
      double best = -1.0;
      for (std::size_t t = 0; t < times; ++t) {
        double s = 0.0;
        for (const CoupledPath& p : ens.paths) s += p.stats[l].gauges.front().mass[t];
        if (s > best) {
          best = s;
          arg = t;
        }
      }
      EstimateRow sup_row = estimate("G_sup_mean" + sfx, levels[l], detail::collect(ens.paths, [&](const CoupledPath& p) {
                                       return p.stats[l].gauges.front().mass[arg];
                                     }));
      rep.rows.push_back(sup_row);
      rep.rows.push_back(estimate("G_prime_integral" + sfx, levels[l], detail::collect(ens.paths, [&](const CoupledPath& p) {
                                    return p.stats[l].gauges.front().prime_integral;
                                  })));
      rep.rows.push_back(estimate("G_integral" + sfx, levels[l], detail::collect(ens.paths, [&](const CoupledPath& p) {
                                    return p.stats[l].gauges.front().integral;
                                  })));
      rep.rows.push_back(estimate("excursion_fraction" + sfx, levels[l], detail::collect(ens.paths, [&](const CoupledPath& p) {
                                    return p.stats[l].excursion_fraction();
                                  })));
    }
    for (const std::string q : {"G_sup_mean", "G_prime_integral"}) {
      const EstimateRow* a = rep.find(q + sfx, levels[0]);
      const EstimateRow* b = rep.find(q + sfx, levels[1]);
      const bool finite = std::isfinite(a->mean) && std::isfinite(b->mean);
      rep.add_check("finite:" + q + sfx, finite, detail::num(a->mean) + ", " + detail::num(b->mean));
      const double ratio = detail::band_ratio({a, b});
      rep.add_check("halving_band:" + q + sfx, finite && ratio <= base.thresholds.derivative_band,
                    "max/min under lambda-halving = " + detail::num(ratio) + " (limit " +
                        detail::num(base.thresholds.derivative_band) + ")");
    }
    const EstimateRow* exc = rep.find("excursion_fraction" + sfx, levels[1]);
    rep.add_check("excursions" + sfx, exc->mean < base.thresholds.excursion_limit,
                  "fraction " + detail::num(exc->mean) + " at lambda " + detail::num(levels[1]) + " (limit " +
                      detail::num(base.thresholds.excursion_limit) + ")");
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Deterministic convergence oracles

struct OracleConfig {
  double heat_amplitude = 1.0;  // u0 = a cos(pi x / L)
  double heat_time = 0.1;
  std::vector<int> spatial_cells{8, 16, 32};
  double spatial_dt = 1e-6;
  int temporal_cells = 64;
  std::vector<double> temporal_dt{1e-2, 5e-3, 2.5e-3};
  double ode_initial = 0.5;
  double ode_time = 1.0;
  std::vector<double> ode_dt{0.02, 0.01, 0.005};
};

namespace detail {
inline Field heat_run(const Grid& g, const Field& u0, double dt, double t_end) {
  StepperConfig sc;
  sc.dt = dt;
  sc.t_end = t_end;
  sc.gauge_orders.clear();
  NoiseSpec off;
  off.modes = 0;
  const auto res = simulate_with(u0, ConstantForcing{Field(g)}, NoPotential{}, off, sc, g,
                                 [](int) { return NoiseIncrement{}; });
  return res.final_state.u;
}

inline double l2_error(const Grid& g, const Field& a, const Field& b) {
  return std::sqrt(norms(g, a - b).h_norm_sq);
}

inline void add_order_checks(EstimateReport& rep, const std::string& name, const std::vector<double>& errors,
                             const std::vector<double>& refinement, double limit) {
  bool all_zero = std::all_of(errors.begin(), errors.end(), [](double e) { return e == 0.0; });
  if (all_zero) {
    rep.add_check(name, true, "zero error at every level");
    return;
  }
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    const double order = std::log(errors[i] / errors[i + 1]) / std::log(refinement[i] / refinement[i + 1]);
    rep.rows.push_back(derived(name + "_order_" + std::to_string(i + 1), std::numeric_limits<double>::quiet_NaN(), order));
    rep.add_check(name + "_" + std::to_string(i + 1), std::isfinite(order) && order >= limit,
                  "observed order " + num(order) + " (limit " + num(limit) + ")");
  }
}
}  // namespace detail

/// Neumann heat limit (potential and noise off) against the cosine mode
/// solution, and the spatially constant reduction u' = -F'_lambda(u) against
/// an adaptive Dormand-Prince reference at the smallest lambda of `cfg`.
inline EstimateReport heat_and_ode_oracles(const EnsembleConfig& cfg, const OracleConfig& oc = {}) {
  const auto start = std::chrono::steady_clock::now();
  EstimateReport rep = detail::new_report("oracles", cfg);
  rep.replicates = 1;
  const double pi = std::numbers::pi;
  const double L = cfg.grid.extent(0);
  const double T = oc.heat_time;
  auto mode = [&](const Grid& g) { return sample(g, [&](double x, double) { return oc.heat_amplitude * std::cos(pi * x / L); }); };

  // Space: continuous solution a e^{-k^2 T} cos(k x), dt small enough to be negligible.
  std::vector<double> spatial_err, spatial_h;
  for (int n : oc.spatial_cells) {
    const Grid g(L, n);
    const Field u = detail::heat_run(g, mode(g), oc.spatial_dt, T);
    const double decay = std::exp(-(pi / L) * (pi / L) * T);
    const double err = detail::l2_error(g, u, decay * mode(g));
    spatial_err.push_back(err);
    spatial_h.push_back(g.spacing(0));
    rep.rows.push_back(derived("heat_spatial_error_N" + std::to_string(n), std::numeric_limits<double>::quiet_NaN(), err));
  }
  detail::add_order_checks(rep, "heat_spatial", spatial_err, spatial_h, cfg.thresholds.spatial_order);

  // Time: cos(k x_i) is an exact eigenvector of Delta_h, so the semi-discrete
  // solution is a e^{-mu_h T} cos(k x_i) with mu_h = (2/h^2)(1 - cos(k h)).
  std::vector<double> temporal_err;
  {
    const Grid g(L, oc.temporal_cells);
    const double h = g.spacing(0);
    const double mu = 2.0 / (h * h) * (1.0 - std::cos(pi / L * h));
    for (double dt : oc.temporal_dt) {
      const Field u = detail::heat_run(g, mode(g), dt, T);
      const double err = detail::l2_error(g, u, std::exp(-mu * T) * mode(g));
      temporal_err.push_back(err);
      rep.rows.push_back(derived("heat_temporal_error_dt" + detail::num(dt), std::numeric_limits<double>::quiet_NaN(), err));
    }
  }
  detail::add_order_checks(rep, "heat_temporal", temporal_err, oc.temporal_dt, cfg.thresholds.temporal_order);

  // 0-D: spatially constant data stays constant, giving u' = -F'_lambda(u).
  const double lam = cfg.lambda_levels.back();
  const YosidaLevel level = cfg.level(lam);
  const RegularizedLogarithmic nl{cfg.potential, level};
  auto rhs = [&](const double& u, double& dudt, double) {
    const MonotonePoint p = nl.evaluate(u);
    dudt = -(p.phi - nl.concave_rate() * u);
  };
  double reference = oc.ode_initial;
  boost::numeric::odeint::integrate_adaptive(
      boost::numeric::odeint::make_controlled<boost::numeric::odeint::runge_kutta_dopri5<double>>(1e-14, 1e-14), rhs,
      reference, 0.0, oc.ode_time, 1e-4);
  rep.rows.push_back(derived("ode_reference", lam, reference));
  std::vector<double> ode_err;
  {
    const Grid g(L, 2);
    NoiseSpec off;
    off.modes = 0;
    for (double dt : oc.ode_dt) {
      StepperConfig sc = cfg.stepper;
      sc.dt = dt;
      sc.t_end = oc.ode_time;
      sc.gauge_orders.clear();
      const auto res = simulate_with(Field(g, oc.ode_initial), ConstantForcing{Field(g)}, nl, off, sc, g,
                                     [](int) { return NoiseIncrement{}; });
      const double err = std::abs(res.final_state.u[0] - reference);
      ode_err.push_back(err);
      rep.rows.push_back(derived("ode_error_dt" + detail::num(dt), lam, err));
    }
  }
  detail::add_order_checks(rep, "ode_temporal", ode_err, oc.ode_dt, cfg.thresholds.temporal_order);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace sac
