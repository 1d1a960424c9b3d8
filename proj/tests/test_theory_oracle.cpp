#include <cmath>

#include <gtest/gtest.h>

#include "pkd/error.hpp"
#include "pkd/theory_oracle.hpp"
#include "test_support.hpp"

using namespace pkd;

namespace {

DiscreteWorld two_atoms(double l0, double l1) {
  DiscreteWorld w;
  w.atoms = {"a", "b"};
  w.p_x = {0.5, 0.5};
  w.p_g = {0.5, 0.5};
  w.p_l = {l0, l1};
  return w;
}

}  // namespace

TEST(hypothetical, flat_posterior_keeps_the_distribution) {
  DiscreteWorld w;
  w.atoms = {"a", "b", "c"};
  w.p_x = w.p_g = {0.2, 0.3, 0.5};
  w.p_l = {0.5, 0.5, 0.5};
  const DiscreteWorld h = build_hypothetical(w);
  EXPECT_EQ(h.z, 1.0);
  EXPECT_EQ(h.p_h, w.p_g);
  for (double d : optimal_discriminator(h)) EXPECT_EQ(d, 0.5);
}

TEST(hypothetical, calibrated_two_atom_world) {
  const DiscreteWorld h = build_hypothetical(two_atoms(1.0 / 3.0, 0.6));
  EXPECT_NEAR(h.z, 1.0, 1e-15);
  EXPECT_NEAR(h.p_h[0], 0.25, 1e-15);
  EXPECT_NEAR(h.p_h[1], 0.75, 1e-15);
  const auto d = optimal_discriminator(h);
  EXPECT_NEAR(d[0], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(d[1], 0.6, 1e-12);
}

TEST(hypothetical, uncalibrated_two_atom_world) {
  const DiscreteWorld h = build_hypothetical(two_atoms(0.2, 0.8));
  EXPECT_NEAR(h.z, 2.125, 1e-15);
  EXPECT_NEAR(h.p_h[0], 1.0 / 17.0, 1e-15);
  EXPECT_NEAR(h.p_h[1], 16.0 / 17.0, 1e-15);
  // D* is P_l only up to the normalizer: sigmoid(logit(P_l) - log Z).
  const auto d = optimal_discriminator(h);
  EXPECT_NEAR(d[0], sigmoid(logit(0.2) - std::log(2.125)), 1e-12);
  EXPECT_NEAR(d[1], sigmoid(logit(0.8) - std::log(2.125)), 1e-12);
  EXPECT_GT(std::abs(d[1] - 0.8), 0.1);
}

TEST(hypothetical, calibration_makes_discriminator_equal_posterior) {
  const DiscreteWorld c = calibrate(two_atoms(0.2, 0.8));
  EXPECT_NEAR(c.z, 1.0, 1e-12);
  const auto d = optimal_discriminator(c);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(d[i], c.p_l[i], 1e-12);
    EXPECT_NEAR(bisect_discriminator(c.p_h[i], c.p_g[i]), d[i], 1e-9);
  }
}

TEST(hypothetical, saturated_posterior_is_an_error) {
  EXPECT_THROW(build_hypothetical(two_atoms(0.5, 1.0 - 1e-13)), NumericError);
  EXPECT_THROW(two_atoms(0.5, 1.0).validate(), ConfigError);
  DiscreteWorld bad = two_atoms(0.5, 0.5);
  bad.p_x = {0.5, 0.6};
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(optimal_discriminator(two_atoms(0.5, 0.5)), ConfigError);
}

TEST(hypothetical, world_loads_from_config) {
  const DiscreteWorld w = DiscreteWorld::load(test_support::source_dir() / "configs/discrete_world.cfg");
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w.p_g, w.p_x);
  EXPECT_NEAR(build_hypothetical(w).z, 1.0, 1e-15);
}

TEST(bisection, agrees_with_closed_form) {
  for (double a : {0.01, 0.3, 1.0, 7.0}) {
    for (double b : {0.02, 0.5, 3.0}) {
      EXPECT_NEAR(bisect_discriminator(a, b), a / (a + b), 1e-11);
    }
  }
  EXPECT_THROW(bisect_discriminator(0.0, 1.0), NumericError);
}

TEST(lp_oracle, three_point_example) {
  const std::vector<double> v = {0.5, -0.3, 0.05};
  EXPECT_EQ(lp_oracle(v, 0.001, 0.1), (std::vector<double>{-0.001, 0.001, 0.0}));
}

TEST(lp_oracle, zero_and_unpenalized_cases) {
  const std::vector<double> v = {0.0, 2.0, -1e-300, 0.0};
  const auto x = lp_oracle(v, 0.5, 0.0);
  EXPECT_EQ(x, (std::vector<double>{0.0, -0.5, 0.5, 0.0}));
  const std::vector<double> ties = {0.1, -0.1};
  EXPECT_EQ(lp_oracle(ties, 1.0, 0.1), (std::vector<double>{0.0, 0.0}));
}

TEST(lp_oracle, matches_joint_grid_search) {
  Rng rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + trial % 3;
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    const double lambda = 0.5 * std::abs(u(rng));
    const double eps = 0.01;
    const GridSolution g = lp_grid_oracle(v, eps, lambda, 20);
    const auto x = lp_oracle(v, eps, lambda);
    EXPECT_EQ(g.x, x);
    EXPECT_NEAR(g.value, lp_objective(v, x, lambda), 1e-15);
  }
  const std::vector<double> too_long(4, 1.0);
  EXPECT_THROW(lp_grid_oracle(too_long, 1.0, 0.1), ConfigError);
}

TEST(dual_certificate, zero_direction) {
  const std::vector<double> v(3, 0.0);
  const DualCertificate c = dual_solution(v, 0.01, 0.2);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c.beta[i], 0.0);
    EXPECT_EQ(c.gamma[i], 0.0);
  }
  EXPECT_EQ(c.primal, 0.0);
  EXPECT_EQ(c.dual, 0.0);
}

TEST(dual_certificate, single_coordinate_by_hand) {
  const std::vector<double> v = {0.5};
  const DualCertificate c = dual_solution(v, 0.001, 0.1);
  EXPECT_DOUBLE_EQ(c.gamma[0], 0.4);
  EXPECT_EQ(c.beta[0], 0.0);
  EXPECT_NEAR(c.dual, -4e-4, 1e-18);
  EXPECT_NEAR(c.primal, 0.5 * -0.001 + 0.1 * 0.001, 1e-18);
  EXPECT_LE(std::abs(c.gap()), 1e-12);
  const std::string csv = certificate_csv(v, c);
  EXPECT_EQ(csv.rfind("# primal=", 0), 0u);
}

TEST(dual_certificate, random_trials_close_the_gap) {
  Rng rng(6);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(8);
    for (double& x : v) x = normal(rng);
    const double lambda = std::abs(normal(rng));
    const DualCertificate c = dual_solution(v, 1e-3, lambda);
    EXPECT_LE(std::abs(c.gap()), 1e-12);
    EXPECT_LE(c.feasibility, lambda + 1e-12);
    EXPECT_LE(c.slackness, 1e-12);
  }
  EXPECT_THROW(dual_solution(std::vector<double>{1.0}, 0.0, 0.1), ConfigError);
}

TEST(step_accounting, synthetic_trace) {
  const double lambda = 0.1, eps = 1e-3;
  ExtrapolationTrace t;
  t.fixed_batch = true;
  StepRecord r;
  r.step = 1;
  r.gradient = {2 * lambda, 0.5 * lambda};
  r.signs = closed_form_step(r.gradient, eps, lambda).signs;
  r.batch_objective_before = 0.0;
  r.batch_objective_after = -2 * lambda * eps;
  t.steps.push_back(r);

  StepRecord idle;
  idle.step = 2;
  idle.gradient = {0.5 * lambda, -lambda};
  idle.signs = closed_form_step(idle.gradient, eps, lambda).signs;
  t.steps.push_back(idle);

  const StepAccountingReport rep = verify_step_accounting(t, lambda, eps, 1.0);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].active, 1u);
  EXPECT_DOUBLE_EQ(rep.rows[0].predicted, 2 * lambda * eps);
  EXPECT_GE(rep.rows[0].predicted, lambda * eps);
  EXPECT_EQ(rep.rows[1].active, 0u);
  EXPECT_EQ(rep.rows[1].predicted, 0.0);
  EXPECT_EQ(rep.rows[1].realized, 0.0);
  EXPECT_TRUE(rep.all_bounds_hold());
  EXPECT_TRUE(rep.all_realized_ok());
  EXPECT_EQ(rep.flagged(), 0u);

  ExtrapolationTrace tampered = t;
  tampered.steps[0].signs[1] = 1;
  EXPECT_THROW(verify_step_accounting(tampered, lambda, eps, 1.0), CheckFailure);
  ExtrapolationTrace stochastic = t;
  stochastic.fixed_batch = false;
  EXPECT_THROW(verify_step_accounting(stochastic, lambda, eps, 1.0), ConfigError);
}
