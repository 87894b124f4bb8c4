#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sac/potential.hpp"

using namespace sac;

namespace {

// Adaptive Simpson for the Moreau-envelope cross-check.
template <class F>
double simpson(F&& f, double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-13) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50);
}

}  // namespace

TEST(BetaFamily, ValuesAtZero) {
  const BetaValues b = beta_family_eval(0.0);
  EXPECT_EQ(b.beta, 0.0);
  EXPECT_EQ(b.beta_prime, 2.0);
  EXPECT_EQ(b.beta_hat, 0.0);
}

TEST(BetaFamily, FrozenValuesAtHalf) {
  const BetaValues b = beta_family_eval(0.5);
  EXPECT_NEAR(b.beta, 1.0986122886681098, 1e-15);
  EXPECT_NEAR(b.beta_prime, 8.0 / 3.0, 1e-15);
  EXPECT_NEAR(b.beta_hat, 0.26162407188227392, 1e-15);
}

TEST(BetaFamily, Symmetry) {
  for (double r : {0.1, 0.5, 0.9, 0.999999}) {
    const BetaValues p = beta_family_eval(r);
    const BetaValues m = beta_family_eval(-r);
    EXPECT_EQ(m.beta, -p.beta);
    EXPECT_DOUBLE_EQ(m.beta_hat, p.beta_hat);
    EXPECT_DOUBLE_EQ(m.beta_prime, p.beta_prime);
  }
}

TEST(BetaFamily, PrimitiveDerivative) {
  for (double r : {-0.95, -0.3, 0.2, 0.7, 0.99}) {
    const double h = 1e-6;
    const double fd = (beta_family_eval(r + h).beta_hat - beta_family_eval(r - h).beta_hat) / (2 * h);
    EXPECT_NEAR(fd, beta_family_eval(r).beta, 1e-8);
  }
}

TEST(BetaFamily, DomainErrors) {
  EXPECT_THROW(beta_family_eval(1.0), DomainError);
  EXPECT_THROW(beta_family_eval(-1.0), DomainError);
  EXPECT_THROW(beta_family_eval(2.0), DomainError);
  EXPECT_THROW(beta_family_eval(std::nan("")), DomainError);
}

TEST(Potential, FrozenDerivative) {
  const PotentialParams p = PotentialParams::logarithmic(2.0);
  EXPECT_NEAR(potential_eval(p, 0.9).F1, -0.65556102083355954, 1e-14);
  EXPECT_NEAR(potential_eval(p, 0.0).F1, 0.0, 0.0);
}

TEST(Potential, DefaultOffsetMakesMinimumZero) {
  const PotentialParams p = PotentialParams::logarithmic(2.0);
  EXPECT_NEAR(p.K, 0.65304777485384775, 1e-12);
  EXPECT_NEAR(potential_eval(p, 0.95750402407726874).F, 0.0, 1e-12);
  for (int i = -999; i <= 999; ++i) EXPECT_GE(potential_eval(p, i / 1000.0).F, -1e-12);
}

TEST(Potential, Validation) {
  EXPECT_THROW(PotentialParams::logarithmic(0.5), DomainError);
  EXPECT_THROW(PotentialParams::logarithmic(1.0), DomainError);
  EXPECT_THROW(PotentialParams::logarithmic(2.0, 0.0), DomainError);
  EXPECT_NO_THROW(PotentialParams::logarithmic(2.0, 1.0));
  try {
    PotentialParams::logarithmic(0.5);
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("c > 1"), std::string::npos);
  }
  EXPECT_THROW(potential_eval(PotentialParams::logarithmic(2.0), 1.0), DomainError);
}

TEST(Potential, PolynomialKind) {
  const PotentialParams p = PotentialParams::polynomial();
  const PotentialValues v = potential_eval(p, 2.0);
  EXPECT_DOUBLE_EQ(v.F, 2.25);
  EXPECT_DOUBLE_EQ(v.F1, 6.0);
  EXPECT_DOUBLE_EQ(v.F2, 11.0);
  EXPECT_DOUBLE_EQ(potential_eval(p, 1.0).F, 0.0);
}

TEST(Yosida, LevelValidation) {
  EXPECT_THROW(YosidaLevel(0.0), DomainError);
  EXPECT_THROW(YosidaLevel(1.0), DomainError);
  EXPECT_THROW(YosidaLevel(0.5, 0.0), DomainError);
  EXPECT_NO_THROW(YosidaLevel(0.5));
}

TEST(Yosida, FrozenResolvent) {
  const YosidaLevel level(0.5);
  EXPECT_NEAR(resolvent(level, 1.0), 0.47870154299972106, 1e-15);
  EXPECT_NEAR(yosida_eval(level, 1.0).beta_l, 1.0425969140005579, 1e-14);
  EXPECT_NEAR(yosida_eval(level, 1.0).beta_hat_l, 0.51057665249055459, 1e-14);
  const PotentialParams p = PotentialParams::logarithmic(2.0);
  EXPECT_NEAR(regularized_potential_eval(p, level, 1.0).F1, -2.9574030859994421, 1e-14);
}

TEST(Yosida, ZeroAndOddness) {
  const YosidaLevel level(0.1);
  EXPECT_EQ(resolvent(level, 0.0), 0.0);
  for (double x : {0.3, 2.0, 50.0}) {
    EXPECT_EQ(resolvent(level, -x), -resolvent(level, x));
    EXPECT_EQ(yosida_eval(level, -x).beta_l, -yosida_eval(level, x).beta_l);
  }
}

TEST(Yosida, ExtremeArguments) {
  for (double lam : {1e-6, 1e-3, 0.9}) {
    const YosidaLevel level(lam);
    for (double x : {1e-300, 1e-8, 1.0 - 1e-12, 1.0, 1e3, 1e8}) {
      const ResolventPoint j = resolvent_point(level, x);
      EXPECT_LT(std::abs(j.value), 1.0);
      EXPECT_TRUE(std::isfinite(j.beta));
      EXPECT_NEAR(std::tanh(0.5 * j.beta) + lam * j.beta, x, 1e-12 * std::max(1.0, x));
    }
  }
  EXPECT_THROW(resolvent(YosidaLevel(0.1), std::numeric_limits<double>::infinity()), DomainError);
}

TEST(Yosida, PropertySweep) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lam_d(1e-4, 0.9), x_d(-10.0, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const YosidaLevel level(lam_d(rng));
    const double x = x_d(rng);
    const double y = x_d(rng);
    const ResolventPoint jx = resolvent_point(level, x);
    const double jy = resolvent(level, y);
    ASSERT_LT(std::abs(jx.value), 1.0);
    ASSERT_LE(std::abs(jx.value + level.lambda * jx.beta - x), 1e-10);
    ASSERT_LE(std::abs(jx.value - jy), std::abs(x - y) + 1e-15);
  }
}

TEST(Yosida, DerivativeMatchesFiniteDifference) {
  const YosidaLevel level(0.05);
  for (double x : {-3.0, -0.4, 0.0, 0.8, 1.5}) {
    const double h = 1e-6;
    const double fd = (yosida_eval(level, x + h).beta_l - yosida_eval(level, x - h).beta_l) / (2 * h);
    EXPECT_NEAR(fd, yosida_eval(level, x).beta_l_prime, 1e-6 * std::max(1.0, fd));
    const double fdh = (yosida_eval(level, x + h).beta_hat_l - yosida_eval(level, x - h).beta_hat_l) / (2 * h);
    EXPECT_NEAR(fdh, yosida_eval(level, x).beta_l, 1e-7);
  }
}

TEST(Yosida, MoreauEnvelopeMatchesQuadrature) {
  for (double lam : {0.5, 0.1, 0.01}) {
    const YosidaLevel level(lam);
    for (double x : {0.3, 1.0, 2.5}) {
      const double q = integrate([&](double t) { return yosida_eval(level, t).beta_l; }, 0.0, x);
      EXPECT_NEAR(q, yosida_eval(level, x).beta_hat_l, 1e-8);
    }
  }
}

TEST(Yosida, RegularizedBelowOriginal) {
  const PotentialParams p = PotentialParams::logarithmic(2.0);
  for (double lam : {0.2, 0.05, 0.001}) {
    const YosidaLevel level(lam);
    for (int i = -999; i <= 999; i += 7) {
      const double r = i / 1000.0;
      EXPECT_LE(regularized_potential_eval(p, level, r).F, potential_eval(p, r).F + 1e-12);
    }
  }
}

TEST(Yosida, FirstOrderConvergenceAtHalf) {
  const double exact = beta_family_eval(0.5).beta;
  double prev = std::abs(yosida_eval(YosidaLevel(0.05), 0.5).beta_l - exact);
  for (double lam = 0.025; lam > 1e-4; lam /= 2) {
    const double err = std::abs(yosida_eval(YosidaLevel(lam), 0.5).beta_l - exact);
    EXPECT_GE(prev / err, 1.8);
    prev = err;
  }
}

TEST(Gauge, Values) {
  const GaugeValues g3 = gauge_eval(GaugeOrder(3), 0.5);
  EXPECT_NEAR(g3.G, 16.0 / 9.0, 1e-15);
  EXPECT_NEAR(g3.G_prime, 2.0 * 2.0 * 0.5 * std::pow(0.75, -3), 1e-13);
  EXPECT_EQ(gauge_eval(GaugeOrder(2), 0.0).G, 1.0);
  EXPECT_THROW(GaugeOrder(1), DomainError);
  EXPECT_THROW(gauge_eval(GaugeOrder(2), 1.0), DomainError);
  for (double r : {0.0, 0.4, -0.9}) EXPECT_GE(gauge_eval(GaugeOrder(3), r).G, gauge_eval(GaugeOrder(2), r).G);
}
