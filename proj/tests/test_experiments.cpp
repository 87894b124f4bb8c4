#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sac/experiments.hpp"

using namespace sac;

namespace {

EnsembleConfig small_config() {
  EnsembleConfig cfg;
  cfg.replicates = 4;
  cfg.grid = Grid(1.0, 16);
  cfg.stepper.dt = 1e-2;
  cfg.stepper.t_end = 0.2;
  cfg.noise.modes = 4;
  cfg.lambda_levels = {0.2, 0.1, 0.05};
  cfg.u0 = sample(cfg.grid, [](double x, double) { return 0.5 * std::cos(std::numbers::pi * x); });
  cfg.forcing = Field(cfg.grid);
  return cfg;
}

}  // namespace

TEST(Estimate, MeanStderrInterval) {
  const EstimateRow r = estimate("q", 0.1, {1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(r.mean, 2.5);
  EXPECT_NEAR(r.stderr_, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
  EXPECT_NEAR(r.ci_high - r.ci_low, 2 * 1.959963984540054 * r.stderr_, 1e-14);
  EXPECT_EQ(r.samples, 4);
  EXPECT_TRUE(std::isnan(estimate("q", 0.1, {1.0}).stderr_));
}

TEST(EnsembleConfig, Validation) {
  EnsembleConfig cfg = small_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.replicates = 1;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = small_config();
  cfg.lambda_levels = {0.1, 0.2};
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = small_config();
  cfg.u0[0] = 1.0;
  EXPECT_THROW(cfg.validate(), DomainError);
}

TEST(Pool, ResultsIndependentOfThreadCount) {
  auto f = [](int r) { return r * r; };
  EXPECT_EQ(run_replicates<int>(17, 1, "t", f), run_replicates<int>(17, 5, "t", f));
  try {
    run_replicates<int>(8, 3, "t", [](int r) -> int {
      if (r == 5 || r == 6) throw std::runtime_error("boom " + std::to_string(r));
      return r;
    });
    FAIL();
  } catch (const StudyError& e) {
    EXPECT_NE(std::string(e.what()).find("replicate 5"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("boom 5"), std::string::npos);
  }
}

TEST(Coupled, IdenticalMembersGiveZeroDifference) {
  const EnsembleConfig cfg = small_config();
  const std::vector<CoupledMember> members{{cfg.level(0.1), cfg.u0, cfg.forcing}, {cfg.level(0.1), cfg.u0, cfg.forcing}};
  const CoupledPath p = run_coupled(cfg.grid, cfg.potential, cfg.noise, cfg.stepper, members, {{0, 1}}, 3, 0);
  EXPECT_EQ(p.pairs[0].cauchy(), 0.0);
  EXPECT_TRUE(p.coupled());
  EXPECT_EQ(p.stats[0].sup_h_sq, p.stats[1].sup_h_sq);
}

TEST(Coupled, MatchesIndependentSimulation) {
  const EnsembleConfig cfg = small_config();
  const std::vector<CoupledMember> members{{cfg.level(0.1), cfg.u0, cfg.forcing}};
  const CoupledPath p = run_coupled(cfg.grid, cfg.potential, cfg.noise, cfg.stepper, members, {}, 3, 2);
  const auto s = simulate(cfg.u0, ConstantForcing{cfg.forcing}, cfg.level(0.1), cfg.noise, cfg.stepper, cfg.grid,
                          cfg.potential, 3, 2);
  EXPECT_EQ(p.stats[0].int_fprime_sq, s.stats.int_fprime_sq);
  EXPECT_EQ(p.increment_hashes[0], s.stats.increment_hash);
}

TEST(Uniform, ZeroDataGivesZeroStatistics) {
  EnsembleConfig cfg = small_config();
  cfg.noise.modes = 0;
  cfg.u0 = Field(cfg.grid);
  const EstimateReport rep = uniform_bounds_study(cfg);
  for (const char* q : {"sup_h_sq", "int_grad_sq", "int_fprime_sq", "int_beta_sq"})
    for (double lam : cfg.lambda_levels) EXPECT_EQ(rep.find(q, lam)->mean, 0.0);
  EXPECT_TRUE(rep.passed());
}

TEST(Uniform, RowsAndThreadIndependentCsv) {
  EnsembleConfig cfg = small_config();
  const EstimateReport a = uniform_bounds_study(cfg);
  cfg.threads = 3;
  const EstimateReport b = uniform_bounds_study(cfg);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  EXPECT_EQ(a.summary().dump(), b.summary().dump());
  EXPECT_EQ(a.rows.size(), 5 * cfg.lambda_levels.size());
  for (const EstimateRow& r : a.rows) EXPECT_EQ(r.samples, 4);
}

TEST(Uniform, StandardErrorMatchesRawPaths) {
  EnsembleConfig cfg = small_config();
  cfg.lambda_levels = {0.1};
  cfg.replicates = 16;
  const LambdaEnsemble ens = run_lambda_ensemble(cfg);
  ASSERT_EQ(ens.paths.size(), 16u);
  double sum = 0.0;
  for (const CoupledPath& p : ens.paths) sum += p.stats[0].sup_h_sq;
  const double mean = sum / 16.0;
  double ss = 0.0;
  for (const CoupledPath& p : ens.paths) ss += (p.stats[0].sup_h_sq - mean) * (p.stats[0].sup_h_sq - mean);
  const EstimateRow* row = uniform_bounds_study(ens).find("sup_h_sq");
  ASSERT_NE(row, nullptr);
  EXPECT_NEAR(row->mean, mean, 1e-14);
  EXPECT_NEAR(row->stderr_, std::sqrt(ss / 15.0 / 16.0), 1e-14);
  EXPECT_GT(row->stderr_, 0.0);
}

TEST(Cauchy, NeedsThreeLevels) {
  EnsembleConfig cfg = small_config();
  cfg.lambda_levels = {0.2, 0.1};
  EXPECT_THROW(cauchy_study(cfg), DomainError);
}

TEST(Cauchy, DeterministicBiasDecreases) {
  EnsembleConfig cfg = small_config();
  cfg.noise.modes = 0;
  const EstimateReport rep = cauchy_study(cfg);
  const double d0 = rep.find("cauchy_delta", 0.2)->mean;
  const double d1 = rep.find("cauchy_delta", 0.1)->mean;
  EXPECT_GT(d0, d1);
  EXPECT_GT(d1, 0.0);
  EXPECT_NE(rep.find("cauchy_order", 0.1), nullptr);
}

TEST(Dependence, ZeroPerturbationAndStructure) {
  const EnsembleConfig cfg = small_config();
  const Field zero(cfg.grid);
  const Field bump = sample(cfg.grid, [](double x, double) { return 0.01 * std::cos(std::numbers::pi * x); });
  const EstimateReport rep = dependence_study(cfg, {{"none", 0.0, zero, zero}, {"g", 0.01, zero, bump}});
  EXPECT_EQ(rep.find("dependence_lhs_none_0")->mean, 0.0);
  EXPECT_GT(rep.find("dependence_rhs_g_0.01")->mean, 0.0);
  EXPECT_TRUE(std::isfinite(rep.find("dependence_ratio_g_0.01")->mean));
}

TEST(Dependence, DefaultPerturbations) {
  const EnsembleConfig cfg = small_config();
  const auto ps = default_perturbations(cfg);
  ASSERT_EQ(ps.size(), 6u);
  EXPECT_EQ(ps[0].family, "u0");
  EXPECT_EQ(ps[3].family, "g");
  EXPECT_NEAR(norms(cfg.grid, ps[1].du0).sup_norm, 0.01 * std::cos(std::numbers::pi / 32), 1e-15);
  EXPECT_EQ(norms(cfg.grid, ps[1].dg).sup_norm, 0.0);
}

TEST(Strong, ZeroDataGivesZero) {
  EnsembleConfig cfg = small_config();
  cfg.noise.modes = 0;
  cfg.u0 = Field(cfg.grid);
  const EstimateReport rep = strong_solution_study(cfg);
  EXPECT_EQ(rep.find("sup_grad_sq", 0.05)->mean, 0.0);
  EXPECT_EQ(rep.find("int_lap_sq", 0.05)->mean, 0.0);
}

TEST(Derivative, ZeroPathAndOrdering) {
  EnsembleConfig cfg = small_config();
  cfg.u0 = Field(cfg.grid);
  cfg.noise.modes = 0;
  const EstimateReport rep = derivative_study(cfg);
  const double horizon = cfg.stepper.steps() * cfg.stepper.dt;
  EXPECT_NEAR(rep.find("G_integral_n2", 0.05)->mean, horizon, 1e-12);
  EXPECT_NEAR(rep.find("G_sup_mean_n3", 0.05)->mean, 1.0, 1e-12);
  EXPECT_TRUE(rep.passed());

  cfg = small_config();
  const EstimateReport noisy = derivative_study(cfg);
  EXPECT_GE(noisy.find("G_integral_n3", 0.05)->mean, noisy.find("G_integral_n2", 0.05)->mean);
  cfg.forcing = Field(cfg.grid, 1.5);
  EXPECT_THROW(derivative_study(cfg), DomainError);
}

TEST(Oracles, ReferenceAndZeroData) {
  const EnsembleConfig cfg = EnsembleConfig::reference();
  OracleConfig oc;
  oc.spatial_dt = 1e-5;  // quicker; still leaves the spatial error dominant
  const EstimateReport rep = heat_and_ode_oracles(cfg, oc);
  EXPECT_TRUE(rep.passed()) << rep.to_csv();
  oc.heat_amplitude = 0.0;
  oc.ode_initial = 0.0;
  const EstimateReport zero = heat_and_ode_oracles(cfg, oc);
  EXPECT_TRUE(zero.passed());
  for (const EstimateRow& r : zero.rows) {
    if (r.quantity.find("error") != std::string::npos) {
      EXPECT_EQ(r.mean, 0.0);
    }
  }
  EXPECT_EQ(heat_and_ode_oracles(cfg, oc).to_csv(), zero.to_csv());
}

TEST(Report, CsvFormat) {
  EstimateReport rep;
  rep.study = "x";
  rep.rows.push_back(derived("q", std::numeric_limits<double>::quiet_NaN(), 0.5));
  rep.rows.push_back(estimate("p", 0.1, {1.0, 3.0}));
  EXPECT_EQ(rep.to_csv(),
            "study,quantity,lambda,mean,stderr,ci_low,ci_high,samples\n"
            "x,q,,0.5,,,,0\n"
            "x,p,0.10000000000000001,2,1,0.040036015459945951,3.959963984540054,2\n");
}
