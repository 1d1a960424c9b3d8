#include <cmath>

#include <gtest/gtest.h>

#include "pkd/error.hpp"
#include "pkd/pkd_core.hpp"
#include "pkd/theory_oracle.hpp"
#include "pkd/verify.hpp"
#include "test_support.hpp"

using namespace pkd;
using test_support::latents;
using test_support::logistic;
using test_support::random_generator;

namespace {

std::vector<double> as_doubles(const SparseStep& s) { return s.delta(); }

struct Fixture {
  GeneratorModel g = random_generator(3, {6}, 2, 21, Activation::kSigmoid);
  PosteriorModel p = logistic({2.0, -1.0}, -0.5);
};

}  // namespace

TEST(closed_form_step, per_coordinate_enumeration_example) {
  const std::vector<double> v = {0.5, -0.3, 0.05};
  EXPECT_EQ(as_doubles(closed_form_step(v, 0.001, 0.1)), (std::vector<double>{0.001, -0.001, 0.0}));
}

TEST(closed_form_step, zero_gradient_and_ties_stay_inactive) {
  const std::vector<double> zero(5, 0.0);
  for (double lambda : {0.0, 0.1, 10.0}) {
    EXPECT_EQ(closed_form_step(zero, 0.01, lambda).active_count(), 0u);
  }
  const std::vector<double> tie = {0.25, -0.25, 0.2500000001};
  const SparseStep s = closed_form_step(tie, 1e-3, 0.25);
  EXPECT_FALSE(s.active(0));
  EXPECT_FALSE(s.active(1));
  EXPECT_TRUE(s.active(2));
}

TEST(closed_form_step, equals_oracle_of_negated_direction) {
  Rng rng(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(12);
    for (double& x : v) x = normal(rng);
    const double lambda = std::abs(normal(rng));
    std::vector<double> neg(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
    EXPECT_EQ(closed_form_step(v, 0.01, lambda).delta(), lp_oracle(neg, 0.01, lambda));
  }
}

TEST(closed_form_step, active_set_shrinks_as_lambda_grows) {
  Rng rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(100);
  for (double& x : v) x = normal(rng);
  std::size_t prev = v.size() + 1;
  for (double lambda = 0.0; lambda < 4.0; lambda += 0.05) {
    const std::size_t n = closed_form_step(v, 1e-3, lambda).active_count();
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(knowledge_gradient, flat_posterior_gives_zero_gradient) {
  const Fixture s;
  const PosteriorModel flat = logistic({0.0, 0.0}, 0.3);
  for (double v : knowledge_gradient(s.g, flat, latents(8, 3, 0))) EXPECT_EQ(v, 0.0);
}

TEST(knowledge_gradient, matches_central_differences) {
  const GradientCheckStats stats = objective_gradient_check(20, 3, 1e-6);
  EXPECT_LT(stats.max_relative_error, 1e-4);
  EXPECT_EQ(stats.instances, 20u);
}

TEST(knowledge_gradient, duplicated_batch_gives_same_gradient) {
  const Fixture s;
  const Tensor z = latents(5, 3, 1);
  Tensor twice(Shape{10, 3});
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t c = 0; c < 3; ++c) twice.at(r, c) = z.at(r % 5, c);
  }
  const auto a = knowledge_gradient(s.g, s.p, z);
  const auto b = knowledge_gradient(s.g, s.p, twice);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(knowledge_gradient, shape_errors) {
  const Fixture s;
  EXPECT_THROW(knowledge_gradient(s.g, s.p, latents(4, 2, 0)), ShapeError);
  EXPECT_THROW(knowledge_gradient(s.g, logistic({1.0, 1.0, 1.0}, 0.0), latents(4, 3, 0)), ShapeError);
}

TEST(pkd_config, validation) {
  PkdConfig c;
  EXPECT_NO_THROW(c.validate());
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PkdConfig{};
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PkdConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PkdConfig{};
  c.xi = 1e-7;
  EXPECT_NO_THROW(c.validate(false));
  EXPECT_THROW(c.validate(true), ConfigError);
  c = PkdConfig{};
  c.lambda0 = 0.5;
  EXPECT_DOUBLE_EQ(resolve_lambda(c, 4.0), 2.0);
}

TEST(run_pkd, over_threshold_run_is_a_no_op) {
  const Fixture s;
  PkdConfig cfg;
  cfg.eval_size = 200;
  cfg.lambda = run_lambda_max(s.g, s.p, cfg);
  ASSERT_GT(cfg.lambda, 0.0);
  const PkdResult r = run_pkd(s.g, s.p, cfg);
  EXPECT_TRUE(r.theta == s.g.params);
  EXPECT_EQ(r.trace.cumulative_active(), 0u);
  for (const auto& st : r.trace.steps) EXPECT_EQ(st.active, 0u);
}

TEST(run_pkd, single_step_unrolls_by_hand) {
  const Fixture s;
  PkdConfig cfg;
  cfg.steps = 1;
  cfg.lambda = 0.01;
  cfg.eval_size = 100;
  cfg.batch = 16;
  const PkdResult r = run_pkd(s.g, s.p, cfg);

  Rng batch_rng = make_rng(cfg.seed, "pkd");
  const Tensor z = s.g.prior.sample(cfg.batch, s.g.latent_dim(), batch_rng);
  const auto v = descent_direction(knowledge_gradient(s.g, s.p, z));
  ParamVector expected = s.g.params;
  closed_form_step(v, cfg.epsilon, cfg.lambda).apply(expected.values());
  EXPECT_TRUE(r.theta == expected);
  EXPECT_EQ(r.trace.steps.front().checkpoint_hash, expected.hash_hex());
}

TEST(run_pkd, deterministic_and_eval_set_independent_of_batch) {
  const Fixture s;
  PkdConfig cfg;
  cfg.lambda = 0.005;
  cfg.eval_size = 300;
  const PkdResult a = run_pkd(s.g, s.p, cfg);
  const PkdResult b = run_pkd(s.g, s.p, cfg);
  EXPECT_TRUE(a.theta == b.theta);
  EXPECT_EQ(a.trace.to_csv(), b.trace.to_csv());

  PkdConfig other = cfg;
  other.batch = 7;
  EXPECT_EQ(eval_latents(s.g, cfg), eval_latents(s.g, other));
  EXPECT_DOUBLE_EQ(run_pkd(s.g, s.p, other).trace.initial_objective, a.trace.initial_objective);
}

TEST(run_pkd, objective_goes_down_and_trace_is_consistent) {
  const Fixture s;
  PkdConfig cfg;
  cfg.lambda = 0.0;
  cfg.epsilon = 1e-3;
  cfg.eval_size = 500;
  const PkdResult r = run_pkd(s.g, s.p, cfg);
  ASSERT_EQ(r.trace.steps.size(), cfg.steps);
  EXPECT_LT(r.trace.steps.back().objective, r.trace.initial_objective);
  std::size_t prev = 0;
  for (const auto& st : r.trace.steps) {
    EXPECT_GE(st.cumulative_active, prev);
    EXPECT_GE(st.cumulative_active, st.active);
    prev = st.cumulative_active;
  }
  EXPECT_EQ(r.trace.cumulative_active(), prev);
  const std::string csv = r.trace.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(cfg.steps + 2));
}

TEST(run_pkd, saturated_posterior_stops_early) {
  const Fixture s;
  const PosteriorModel certain = logistic({0.0, 0.0}, 100.0);
  PkdConfig cfg;
  cfg.eval_size = 10;
  const PkdResult r = run_pkd(s.g, certain, cfg);
  EXPECT_EQ(r.trace.status, "saturated");
  EXPECT_TRUE(r.trace.steps.empty());
  EXPECT_TRUE(r.theta == s.g.params);
}

TEST(dirac, minimal_xi_and_over_threshold_is_a_no_op) {
  const Fixture s;
  const Tensor x0 = generate(s.g, Tensor(Shape{3}, std::vector<double>{0.2, -0.1, 0.4}));
  PkdConfig cfg;
  cfg.xi = kMinXi;
  cfg.eval_size = 50;
  InversionConfig inv;
  inv.tolerance = 1e-12;
  const InversionResult z0 = invert_latent(s.g, x0.values(), inv);
  GeneratorModel local = s.g;
  local.prior = PriorSpec::gaussian(z0.z, cfg.xi);
  cfg.lambda = run_lambda_max(local, s.p, cfg);
  const DiracResult r = run_dirac(s.g, s.p, x0.values(), cfg, inv);
  EXPECT_TRUE(r.run.theta == s.g.params);
  EXPECT_LT(r.reconstruction_error, 1e-10);
  const Tensor z = Tensor::row(r.z0);
  EXPECT_EQ(generate(s.g.with_params(r.run.theta), z), generate(s.g, z));
}

TEST(dirac, same_seed_same_result) {
  const Fixture s;
  const Tensor x0 = generate(s.g, Tensor(Shape{3}, std::vector<double>{-0.3, 0.1, 0.2}));
  PkdConfig cfg;
  cfg.lambda = 0.001;
  cfg.eval_size = 50;
  InversionConfig inv;
  inv.tolerance = 1e-10;
  const DiracResult a = run_dirac(s.g, s.p, x0.values(), cfg, inv);
  const DiracResult b = run_dirac(s.g, s.p, x0.values(), cfg, inv);
  EXPECT_TRUE(a.run.theta == b.run.theta);
  EXPECT_EQ(a.z0, b.z0);
}

TEST(lambda_max, flat_posterior_and_single_batch) {
  const Fixture s;
  EXPECT_EQ(lambda_max_estimate(s.g, logistic({0.0, 0.0}, 1.0), s.g.prior, 3, 16, 0), 0.0);

  Rng rng = make_rng(4, "lambda-max");
  const Tensor z = s.g.prior.sample(16, 3, rng);
  double inf = 0.0;
  for (double v : knowledge_gradient(s.g, s.p, z)) inf = std::max(inf, std::abs(v));
  EXPECT_EQ(lambda_max_estimate(s.g, s.p, s.g.prior, 1, 16, 4), inf);

  double prev = 0.0;
  for (std::size_t b = 1; b <= 5; ++b) {
    const double est = lambda_max_estimate(s.g, s.p, s.g.prior, b, 16, 4);
    EXPECT_GE(est, prev);
    prev = est;
  }
  EXPECT_THROW(lambda_max_estimate(s.g, s.p, s.g.prior, 0, 16, 4), ConfigError);
}

TEST(sparse_step, apply_checks_length) {
  SparseStep s{{1, 0, -1}, 0.5};
  std::vector<double> theta = {0.0, 0.0, 0.0};
  s.apply(theta);
  EXPECT_EQ(theta, (std::vector<double>{0.5, 0.0, -0.5}));
  std::vector<double> wrong(2);
  EXPECT_THROW(s.apply(wrong), ShapeError);
}
