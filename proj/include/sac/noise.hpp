#pragma once

/// Truncated cylindrical Wiener noise with boundary-vanishing multiplicative
/// coefficients. Mode k (1-based) acts through
///   sine:      h_k(r) = s0 k^-s sin(k pi (1+r)/2)
///   poly_flat: h_k(r) = s0 k^-s (1-r^2)^m sin(k pi (1+r)/2)
/// so h_k(+-1) = 0, and poly_flat additionally has m-1 vanishing derivatives.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include "sac/grid.hpp"
#include "sac/potential.hpp"
#include "sac/rng.hpp"

namespace sac {

enum class NoiseFamily { sine, poly_flat };

struct NoiseSpec {
  NoiseFamily family = NoiseFamily::sine;
  int modes = 16;
  double decay_exponent = 2.0;
  double amplitude = 0.5;
  int flatness = 1;

  void validate() const {
    auto fail = [](const std::string& msg) { throw DomainError(msg); };
    if (modes < 0) fail("noise.modes must be >= 0");
    if (!(decay_exponent > 1.5)) {
      std::ostringstream os;
      os << "noise.decay_exponent must be > 3/2 for a summable W^{1,inf} series, got " << decay_exponent;
      fail(os.str());
    }
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) fail("noise.amplitude must be >= 0");
    if (flatness < 1) fail("noise.flatness must be >= 1");
  }

  /// s0 k^-s.
  double scale(int k) const { return amplitude * std::pow(static_cast<double>(k), -decay_exponent); }
};

/// h_k(r) for one mode; the formula is evaluated for any real r.
inline double coefficient(const NoiseSpec& spec, int k, double r) {
  if (std::abs(r) == 1.0) return 0.0;
  double v = spec.scale(k) * std::sin(k * std::numbers::pi * (1.0 + r) / 2.0);
  if (spec.family == NoiseFamily::poly_flat) v *= std::pow((1.0 - r) * (1.0 + r), spec.flatness);
  return v;
}

/// Evaluates all active h_k(r), k = 1..modes, with the mode scales cached.
class NoiseCoefficients {
 public:
  explicit NoiseCoefficients(const NoiseSpec& spec) : family_(spec.family), flatness_(spec.flatness) {
    scales_.reserve(static_cast<std::size_t>(spec.modes));
    for (int k = 1; k <= spec.modes; ++k) scales_.push_back(spec.scale(k));
  }

  std::size_t modes() const { return scales_.size(); }

  /// out[k-1] = h_k(r); sin(k theta) by the Chebyshev recurrence.
  void eval(double r, std::vector<double>& out) const {
    out.assign(scales_.size(), 0.0);
    if (scales_.empty() || std::abs(r) == 1.0) return;
    const double theta = std::numbers::pi * (1.0 + r) / 2.0;
    const double two_cos = 2.0 * std::cos(theta);
    double envelope = 1.0;
    if (family_ == NoiseFamily::poly_flat) envelope = std::pow((1.0 - r) * (1.0 + r), flatness_);
    double prev = 0.0;
    double cur = std::sin(theta);
    for (std::size_t k = 0; k < scales_.size(); ++k) {
      out[k] = scales_[k] * envelope * cur;
      const double next = two_cos * cur - prev;
      prev = cur;
      cur = next;
    }
  }

  /// sum_k h_k(r) dW_k.
  double combine(double r, std::span<const double> dW, std::vector<double>& scratch) const {
    eval(r, scratch);
    double acc = 0.0;
    for (std::size_t k = 0; k < scratch.size(); ++k) acc += scratch[k] * dW[k];
    return acc;
  }

 private:
  NoiseFamily family_;
  int flatness_;
  std::vector<double> scales_;
};

struct CbBound {
  double partial = 0.0;  // sum over active modes
  double tail = 0.0;     // analytic bound on the truncated remainder
  double total() const { return partial + tail; }
};

/// Bound on C_B = sum_k ||h_k||^2_{W^{1,inf}} with ||h|| = sup|h| + sup|h'|.
/// For sine the sups are exact: s0 k^-s (1 + k pi/2). For poly_flat the sups
/// are majorised by s0 k^-s (1 + 2m max r(1-r^2)^{m-1} + k pi/2).
/// The remainder uses (a + k pi/2)^2 <= k^2 (a + pi/2)^2 and the integral
/// test: sum_{k>K} k^{2-2s} <= K^{3-2s} / (2s - 3).
inline CbBound cb_components(const NoiseSpec& spec) {
  spec.validate();
  CbBound b;
  if (spec.modes == 0 || spec.amplitude == 0.0) return b;
  double a = 1.0;
  if (spec.family == NoiseFamily::poly_flat) {
    const int m = spec.flatness;
    double peak = 1.0;
    if (m >= 2) {
      const double r = 1.0 / std::sqrt(2.0 * m - 1.0);
      peak = r * std::pow(1.0 - r * r, m - 1);
    }
    a += 2.0 * m * peak;
  }
  const double half_pi = std::numbers::pi / 2.0;
  for (int k = 1; k <= spec.modes; ++k) {
    const double norm = spec.scale(k) * (a + k * half_pi);
    b.partial += norm * norm;
  }
  const double s = spec.decay_exponent;
  b.tail = spec.amplitude * spec.amplitude * (a + half_pi) * (a + half_pi) * std::pow(spec.modes, 3.0 - 2.0 * s) /
           (2.0 * s - 3.0);
  return b;
}

inline double cb_bound(const NoiseSpec& spec) { return cb_components(spec).total(); }

struct IncrementKey {
  std::uint64_t seed = 0;
  std::uint32_t replicate = 0;
  std::uint32_t step = 0;
};

struct NoiseIncrement {
  std::vector<double> dW;
};

/// `modes` independent N(0, dt) variates; mode k uses slot k/2 of the counter.
inline NoiseIncrement sample_increments(const IncrementKey& key, const NoiseSpec& spec, double dt) {
  if (!(dt > 0.0)) throw DomainError("sample_increments: dt must be positive");
  NoiseIncrement inc;
  inc.dW.resize(static_cast<std::size_t>(spec.modes));
  const double sd = std::sqrt(dt);
  for (int k = 0; k < spec.modes; k += 2) {
    const auto [z0, z1] = normal_pair(key.seed, Stream::noise, key.replicate, key.step, static_cast<std::uint32_t>(k / 2));
    inc.dW[k] = sd * z0;
    if (k + 1 < spec.modes) inc.dW[k + 1] = sd * z1;
  }
  return inc;
}

namespace detail {
// Argument of h_k: J_lambda(u) when regularized, else u itself (requires |u| <= 1).
inline double noise_argument(double u, const std::optional<YosidaLevel>& level) {
  if (level) return resolvent(*level, u);
  if (!(std::abs(u) <= 1.0)) {
    std::ostringstream os;
    os << "diffusion coefficient undefined outside [-1, 1]: u = " << u;
    throw DomainError(os.str());
  }
  return u;
}
}  // namespace detail

/// Pointwise sum_k h_k(v(x)) dW_k with v = J_lambda(u) (or u without a level).
inline Field diffusion_field(const NoiseSpec& spec, const Field& u, const NoiseIncrement& inc,
                             const std::optional<YosidaLevel>& level) {
  if (inc.dW.size() != static_cast<std::size_t>(spec.modes))
    throw std::invalid_argument("diffusion_field: increment length differs from mode count");
  Field out(u.size());
  if (spec.modes == 0) return out;
  const NoiseCoefficients coeffs(spec);
  std::vector<double> h;
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = coeffs.combine(detail::noise_argument(u[i], level), inc.dW, h);
  return out;
}

/// Hilbert-Schmidt norm squared sum_k ||h_k(v)||_H^2.
inline double hs_norm_sq(const NoiseSpec& spec, const Grid& g, const Field& u,
                         const std::optional<YosidaLevel>& level) {
  detail::require_size(g, u, "hs_norm_sq");
  if (spec.modes == 0) return 0.0;
  const NoiseCoefficients coeffs(spec);
  std::vector<double> h;
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    coeffs.eval(detail::noise_argument(u[i], level), h);
    for (double v : h) acc += v * v;
  }
  return acc * g.cell_volume();
}

/// ||B(x) - B(y)||_HS^2 for two states.
inline double hs_distance_sq(const NoiseSpec& spec, const Grid& g, const Field& x, const Field& y,
                             const std::optional<YosidaLevel>& level) {
  const NoiseCoefficients coeffs(spec);
  std::vector<double> hx;
  std::vector<double> hy;
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    coeffs.eval(detail::noise_argument(x[i], level), hx);
    coeffs.eval(detail::noise_argument(y[i], level), hy);
    for (std::size_t k = 0; k < hx.size(); ++k) acc += (hx[k] - hy[k]) * (hx[k] - hy[k]);
  }
  return acc * g.cell_volume();
}

}  // namespace sac
