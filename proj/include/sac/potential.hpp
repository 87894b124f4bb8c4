#pragma once

/// Scalar machinery for the logarithmic double-well: the monotone graph
/// beta(r) = ln((1+r)/(1-r)), its resolvent and Yosida regularization,
/// the regularized potential F_lambda and the singularity gauges G_n.
///
/// Near |r| -> 1 everything is evaluated through the dual coordinate
/// s = beta(r) (r = tanh(s/2)), so the Yosida quantities stay exact even
/// when 1 - |J_lambda(x)| underflows.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sac {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PotentialKind { logarithmic, polynomial };

namespace detail {

inline void require_open_unit(double r, const char* what) {
  if (!(std::abs(r) < 1.0)) {
    std::ostringstream os;
    os << what << ": argument " << r << " outside (-1, 1)";
    throw DomainError(os.str());
  }
}

// beta_hat(r) = (1+r)ln(1+r) + (1-r)ln(1-r), r in (-1,1).
inline double beta_hat_direct(double r) {
  return (1.0 + r) * std::log1p(r) + (1.0 - r) * std::log1p(-r);
}

// 1 - |tanh(s/2)| = 2 / (1 + e^{|s|}), without cancellation.
inline double boundary_gap(double s) {
  const double e = std::exp(-std::abs(s));
  return 2.0 * e / (1.0 + e);
}

// beta_hat(tanh(s/2)) written in the dual coordinate.
inline double beta_hat_dual(double s) {
  const double a = std::abs(s);
  if (a < 2.0) return beta_hat_direct(std::tanh(0.5 * s));
  const double ln2 = std::numbers::ln2;
  return 2.0 * ln2 - 2.0 * std::log1p(std::exp(-a)) - boundary_gap(s) * a;
}

inline double clamp_open(double r) {
  constexpr double top = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(r, -top, top);
}

}  // namespace detail

struct BetaValues {
  double beta = 0.0;
  double beta_prime = 0.0;
  double beta_hat = 0.0;
};

/// beta, beta' and the primitive beta_hat (beta_hat(0) = 0) at r in (-1,1).
inline BetaValues beta_family_eval(double r) {
  detail::require_open_unit(r, "beta_family_eval");
  const double one_minus_sq = (1.0 - r) * (1.0 + r);
  return {std::log1p(r) - std::log1p(-r), 2.0 / one_minus_sq, detail::beta_hat_direct(r)};
}

/// Smallest value of F_log(r) = beta_hat(r) - c r^2 on (-1,1), c > 1.
/// The minimizers are +-r* with beta(r*) = 2 c r*; located by bisection in
/// the dual coordinate (s = 2c tanh(s/2)) to 1e-12.
inline double log_potential_minimum(double c) {
  double lo = 1e-8;
  double hi = 2.0 * c + 1.0;
  auto g = [c](double s) { return s - 2.0 * c * std::tanh(0.5 * s); };
  while (hi - lo > 1e-13 * hi) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
  }
  const double s = 0.5 * (lo + hi);
  const double r = std::tanh(0.5 * s);
  return detail::beta_hat_dual(s) - c * r * r;
}

/// Constants of the double-well potential. Use the factories; they validate.
struct PotentialParams {
  PotentialKind kind = PotentialKind::logarithmic;
  double c = 2.0;
  double K = 0.0;

  /// F = F_log + K with c > 1. Without K the offset is chosen so that min F = 0.
  static PotentialParams logarithmic(double c, std::optional<double> K = std::nullopt) {
    if (!(c > 1.0) || !std::isfinite(c)) {
      std::ostringstream os;
      os << "potential.c must satisfy c > 1 for the logarithmic double well, got " << c;
      throw DomainError(os.str());
    }
    const double floor = -log_potential_minimum(c);
    double offset = K.value_or(floor);
    if (!(offset >= 0.0) || offset < floor - 1e-12) {
      std::ostringstream os;
      os << "potential.K must be >= " << floor << " so that F is non-negative, got " << offset;
      throw DomainError(os.str());
    }
    return {PotentialKind::logarithmic, c, offset};
  }

  static PotentialParams polynomial() { return {PotentialKind::polynomial, 0.0, 0.0}; }
};

struct YosidaLevel {
  double lambda = 0.1;
  double newton_tol = 1e-12;
  int newton_max_iter = 200;

  YosidaLevel() = default;
  explicit YosidaLevel(double lam, double tol = 1e-12, int max_iter = 200)
      : lambda(lam), newton_tol(tol), newton_max_iter(max_iter) {
    if (!(lam > 0.0 && lam < 1.0)) {
      std::ostringstream os;
      os << "lambda must lie in (0, 1), got " << lam;
      throw DomainError(os.str());
    }
    if (!(tol > 0.0)) throw DomainError("newton_tol must be positive");
    if (max_iter < 1) throw DomainError("newton_max_iter must be >= 1");
  }
};

struct GaugeOrder {
  int n = 2;

  GaugeOrder() = default;
  explicit GaugeOrder(int order) : n(order) {
    if (order < 2) throw DomainError("gauge order n must be >= 2");
  }
};

struct PotentialValues {
  double F = 0.0;
  double F1 = 0.0;
  double F2 = 0.0;
};

inline PotentialValues potential_eval(const PotentialParams& p, double r) {
  if (p.kind == PotentialKind::polynomial) {
    const double q = 1.0 - r * r;
    return {0.25 * q * q, r * r * r - r, 3.0 * r * r - 1.0};
  }
  detail::require_open_unit(r, "potential_eval");
  const BetaValues b = beta_family_eval(r);
  return {b.beta_hat - p.c * r * r + p.K, b.beta - 2.0 * p.c * r, b.beta_prime - 2.0 * p.c};
}

/// J_lambda(x) together with beta(J_lambda(x)) and the gap 1 - |J_lambda(x)|.
/// `beta` is the exact dual coordinate; it stays finite when `gap` underflows.
struct ResolventPoint {
  double value = 0.0;
  double beta = 0.0;
  double gap = 1.0;

  /// beta'(J) = 2 / (1 - J^2).
  double beta_prime() const { return 2.0 / (gap * (2.0 - gap)); }
};

/// Solves r + lambda beta(r) = x as tanh(s/2) + lambda s = x, s = beta(r).
/// f is odd, increasing, concave on s > 0; Newton from the lower end of the
/// bracket [x/(lambda+1/2), x/lambda] climbs monotonically, and any iterate
/// that leaves the bracket falls back to bisection.
inline ResolventPoint resolvent_point(const YosidaLevel& level, double x) {
  if (!std::isfinite(x)) throw DomainError("resolvent: non-finite argument");
  if (x == 0.0) return {0.0, 0.0, 1.0};
  const double lam = level.lambda;
  const double ax = std::abs(x);
  double lo = std::max(ax / (lam + 0.5), (ax - 1.0) / lam);
  double hi = ax / lam;
  auto residual = [&](double s) { return std::tanh(0.5 * s) + lam * s - ax; };
  const double tol = level.newton_tol * std::max(1.0, ax);

  double s = lo;
  double f = residual(s);
  bool converged = false;
  bool polished = false;
  for (int it = 0; it < level.newton_max_iter && f != 0.0; ++it) {
    (f < 0.0 ? lo : hi) = s;
    const double gap = detail::boundary_gap(s);
    const double slope = 0.5 * gap * (2.0 - gap) + lam;
    double next = s - f / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - s);
    s = next;
    f = residual(s);
    if (std::abs(f) <= tol) {
      // one extra Newton step past the tolerance reaches round-off
      if (polished || step <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, s)) {
        converged = true;
        break;
      }
      polished = true;
    }
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, hi)) break;
  }
  if (f == 0.0) converged = true;
  if (!converged && std::abs(f) > tol) {
    std::ostringstream os;
    os << "resolvent failed to converge: lambda=" << lam << " x=" << x << " residual=" << f;
    throw ConvergenceError(os.str());
  }
  const double sign = x < 0.0 ? -1.0 : 1.0;
  return {sign * detail::clamp_open(std::tanh(0.5 * s)), sign * s, detail::boundary_gap(s)};
}

/// J_lambda(x) = (I + lambda beta)^{-1}(x), always in (-1, 1).
inline double resolvent(const YosidaLevel& level, double x) { return resolvent_point(level, x).value; }

struct YosidaValues {
  double beta_l = 0.0;
  double beta_l_prime = 0.0;
  double beta_hat_l = 0.0;
};

/// beta_lambda = beta(J_lambda), beta_lambda' = beta'(J)/(1 + lambda beta'(J)),
/// beta_hat_lambda via the Moreau envelope beta_hat(J) + lambda/2 beta_lambda^2.
inline YosidaValues yosida_eval(const YosidaLevel& level, double x) {
  const ResolventPoint j = resolvent_point(level, x);
  const double inv_beta_prime = 0.5 * j.gap * (2.0 - j.gap);
  return {j.beta, 1.0 / (inv_beta_prime + level.lambda),
          detail::beta_hat_dual(j.beta) + 0.5 * level.lambda * j.beta * j.beta};
}

/// F_lambda = K + beta_hat_lambda - c r^2 and its first two derivatives.
inline PotentialValues regularized_potential_eval(const PotentialParams& p, const YosidaLevel& level,
                                                  double r) {
  if (p.kind != PotentialKind::logarithmic)
    throw DomainError("regularized_potential_eval: only the logarithmic potential is regularized");
  const YosidaValues y = yosida_eval(level, r);
  return {p.K + y.beta_hat_l - p.c * r * r, y.beta_l - 2.0 * p.c * r, y.beta_l_prime - 2.0 * p.c};
}

struct GaugeValues {
  double G = 0.0;
  double G_prime = 0.0;
};

/// G_n(r) = (1 - r^2)^{1-n} and G_n'(r) = 2(n-1) r (1 - r^2)^{-n}.
inline GaugeValues gauge_eval(const GaugeOrder& order, double r) {
  detail::require_open_unit(r, "gauge_eval");
  const double q = (1.0 - r) * (1.0 + r);
  const int n = order.n;
  const double G = std::pow(q, 1 - n);
  return {G, 2.0 * (n - 1) * r * G / q};
}

}  // namespace sac
