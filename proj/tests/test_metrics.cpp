#include <cmath>

#include <gtest/gtest.h>

#include "pkd/error.hpp"
#include "pkd/metrics.hpp"
#include "test_support.hpp"

using namespace pkd;
using test_support::latents;
using test_support::logistic;
using test_support::random_generator;

namespace {

struct Fixture {
  GeneratorModel g = random_generator(3, {8}, 2, 31, Activation::kSigmoid);
  PosteriorModel knowledge = logistic({3.0, 0.0}, -1.0);
  ProbeSet probes;
  Fixture() {
    probes.add_posterior("other", logistic({0.0, 2.0}, 0.0));
    probes.add_coordinate("x1", 1, 2);
  }
};

PkdConfig quick_config(double lambda) {
  PkdConfig c;
  c.lambda = lambda;
  c.eval_size = 400;
  c.batch = 32;
  c.fixed_batch = true;
  return c;
}

}  // namespace

TEST(objective_estimate, constant_half_posterior) {
  const Fixture s;
  const MeanStat m = objective_estimate(s.g, logistic({0.0, 0.0}, 0.0), latents(50, 3, 0));
  EXPECT_EQ(m.mean, std::log(0.5));
  EXPECT_EQ(m.sem, 0.0);
}

TEST(objective_estimate, vanishing_posterior_gives_zero) {
  const Fixture s;
  const MeanStat m = objective_estimate(s.g, logistic({0.0, 0.0}, -60.0), latents(50, 3, 0));
  // 1 - P_l is clamped to at most 1 - 1e-12.
  EXPECT_NEAR(m.mean, 0.0, 1.01e-12);
}

TEST(objective_estimate, duplicated_points_same_estimate) {
  const Fixture s;
  const Tensor z = latents(10, 3, 1);
  Tensor twice(Shape{20, 3});
  for (std::size_t r = 0; r < 20; ++r) {
    for (std::size_t c = 0; c < 3; ++c) twice.at(r, c) = z.at(r % 10, c);
  }
  EXPECT_NEAR(objective_estimate(s.g, s.knowledge, z).mean, objective_estimate(s.g, s.knowledge, twice).mean,
              1e-15);
}

TEST(shifts, identical_parameters_give_zero) {
  const Fixture s;
  const Tensor z = latents(30, 3, 2);
  EXPECT_EQ(delta_descent(s.g, s.g.params, s.g.params, s.knowledge, z), 0.0);
  const RemainingShift r = delta_remaining(s.g, s.g.params, s.g.params, s.probes, z);
  EXPECT_EQ(r.aggregate, 0.0);
  EXPECT_EQ(r.of("x1"), 0.0);
  EXPECT_THROW(r.of("nope"), ConfigError);
}

TEST(shifts, constant_probe_ignores_parameters) {
  const Fixture s;
  const Tensor z = latents(30, 3, 2);
  ParamVector moved = s.g.params;
  for (double& v : moved.values()) v += 0.3;
  ProbeSet flat;
  flat.add_linear("flat", {0.0, 0.0}, 1.5);
  EXPECT_EQ(delta_remaining(s.g, s.g.params, moved, flat, z).aggregate, 0.0);
  EXPECT_EQ(lipschitz_estimate(s.g, s.g.params, flat, 0.1, 3, z, 0), 0.0);
}

TEST(shifts, default_run_descends_and_over_threshold_run_does_not) {
  const Fixture s;
  const PkdConfig cfg = quick_config(0.0);
  const PkdResult r = run_pkd(s.g, s.knowledge, cfg);
  const Tensor z = eval_latents(s.g, cfg);
  EXPECT_GT(delta_descent(s.g, s.g.params, r.theta, s.knowledge, z), 0.0);
  EXPECT_GT(psr(r.trace, s.g.params.size()), 0.5);

  PkdConfig off = cfg;
  off.lambda = run_lambda_max(s.g, s.knowledge, off);
  const PkdResult n = run_pkd(s.g, s.knowledge, off);
  EXPECT_EQ(delta_descent(s.g, s.g.params, n.theta, s.knowledge, z), 0.0);
  EXPECT_EQ(psr(n.trace, s.g.params.size()), 0.0);
}

TEST(psr, zero_lambda_with_nowhere_zero_gradient_updates_everything) {
  // Non-zero biases and sigmoid units: every coordinate has a non-zero gradient.
  const GeneratorModel g = random_generator(2, {3}, 2, 5, Activation::kSigmoid);
  const PkdConfig cfg = quick_config(0.0);
  const PkdResult r = run_pkd(g, logistic({1.0, -1.0}, 0.2), cfg);
  EXPECT_EQ(psr(r.trace, g.params.size()), 1.0);
  EXPECT_THROW(psr(r.trace, g.params.size() + 1), ShapeError);
}

TEST(lipschitz, identity_generator_coordinate_probe) {
  // G(z) = W z + b with z = 0: d G_0 / d b_0 = 1 and every weight gradient is 0.
  const GeneratorModel g = GeneratorModel::create(2, {}, 2);
  ProbeSet probes;
  probes.add_coordinate("x0", 0, 2);
  const Tensor z(Shape{3, 2}, 0.0);
  EXPECT_EQ(lipschitz_estimate(g, g.params, probes, 0.5, 4, z, 0), 1.0);
}

TEST(lipschitz, more_samples_never_lower_the_estimate) {
  const Fixture s;
  const Tensor z = latents(8, 3, 3);
  double prev = 0.0;
  for (std::size_t n = 1; n <= 5; ++n) {
    const double l = lipschitz_estimate(s.g, s.g.params, s.probes, 0.05, n, z, 9);
    EXPECT_GE(l, prev);
    prev = l;
  }
  EXPECT_THROW(lipschitz_estimate(s.g, s.g.params, s.probes, 0.05, 0, z, 9), ConfigError);
}

TEST(ppr, direct_arithmetic_and_guard) {
  EXPECT_DOUBLE_EQ(ppr_value(0.2, 8, 0.04), 40.0);
  EXPECT_DOUBLE_EQ(ppr_value(-0.2, 8, 0.04), 40.0);
  EXPECT_THROW(ppr_value(0.2, 8, 0.0), NumericError);
  const Fixture s;
  const std::vector<double> z = {0.1, 0.2, 0.3};
  EXPECT_THROW(ppr(s.g, s.g.params, s.g.params, s.knowledge, z), NumericError);
}

TEST(report, fields_are_consistent) {
  const Fixture s;
  const PkdConfig cfg = quick_config(0.001);
  const PkdResult r = run_pkd(s.g, s.knowledge, cfg);
  const Tensor z = eval_latents(s.g, cfg);
  const MetricsReport rep = compute_report(s.g, r.theta, s.knowledge, s.probes, r.trace, z, {});
  EXPECT_DOUBLE_EQ(rep.delta, rep.objective_before - rep.objective_after);
  EXPECT_EQ(rep.delta_remaining, rep.shifts.of("other"));
  EXPECT_DOUBLE_EQ(rep.ratio, rep.delta / rep.delta_remaining);
  EXPECT_DOUBLE_EQ(rep.ratio_bound, cfg.lambda / rep.lipschitz);
  EXPECT_GE(rep.knowledge_after, rep.knowledge_before);
  const std::string csv = rep.to_csv();
  EXPECT_NE(csv.find("shift_x1"), std::string::npos);
}

TEST(sweep, one_point_grid_matches_a_standalone_run) {
  const Fixture s;
  const PkdConfig cfg = quick_config(0.002);
  const std::vector<double> grid = {0.002};
  const SweepTable t = lambda_sweep(s.g, s.knowledge, s.probes, grid, cfg, {});
  ASSERT_EQ(t.rows.size(), 1u);
  const PkdResult r = run_pkd(s.g, s.knowledge, cfg);
  const Tensor z = eval_latents(s.g, cfg);
  const MetricsReport rep = compute_report(s.g, r.theta, s.knowledge, s.probes, r.trace, z, {});
  EXPECT_EQ(t.rows[0].delta, rep.delta);
  EXPECT_EQ(t.rows[0].delta_remaining, rep.delta_remaining);
  EXPECT_EQ(t.rows[0].psr, rep.psr);
  EXPECT_EQ(t.rows[0].knowledge_after, rep.knowledge_after);
  EXPECT_EQ(t.lipschitz, rep.lipschitz);
}

TEST(sweep, fixed_batch_psr_is_non_increasing_and_jobs_do_not_matter) {
  const Fixture s;
  const PkdConfig cfg = quick_config(0.0);
  const double top = run_lambda_max(s.g, s.knowledge, cfg);
  const std::vector<double> grid = log_spaced(top * 1e-4, top, 8);
  const SweepTable a = lambda_sweep(s.g, s.knowledge, s.probes, grid, cfg, {}, 1);
  const SweepTable b = lambda_sweep(s.g, s.knowledge, s.probes, grid, cfg, {}, 3);
  EXPECT_EQ(a.to_csv(), b.to_csv());
  for (std::size_t i = 1; i < a.rows.size(); ++i) EXPECT_LE(a.rows[i].psr, a.rows[i - 1].psr);
  EXPECT_EQ(a.rows.back().psr, 0.0);
  EXPECT_NE(a.to_svg().find("<svg"), std::string::npos);
}

TEST(sweep, empty_grid_is_a_usage_error) {
  const Fixture s;
  EXPECT_THROW(lambda_sweep(s.g, s.knowledge, s.probes, std::vector<double>{}, quick_config(0.0), {}),
               ConfigError);
}
