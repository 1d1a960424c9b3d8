#include <cmath>

#include <gtest/gtest.h>

#include "pkd/error.hpp"
#include "pkd/graph.hpp"
#include "pkd/models.hpp"
#include "pkd/verify.hpp"
#include "test_support.hpp"

using namespace pkd;
using test_support::latents;
using test_support::random_generator;

namespace {

AttributeMixtureSpec gaussian_spec(std::vector<double> mean, std::vector<double> var) {
  const std::size_t d = mean.size();
  std::vector<double> e0(d, 0.0), e1(d, 0.0);
  e0[0] = 1.0;
  e1[d - 1] = 1.0;
  return AttributeMixtureSpec(d, {{1.0, std::move(mean), std::move(var)}},
                              {{"a", e0, 0.0, 1.0}, {"b", e1, 0.0, 1.0}});
}

}  // namespace

TEST(generator, zero_network_outputs_zero) {
  const GeneratorModel g = GeneratorModel::create(3, {5, 4}, 2);
  const Tensor y = generate(g, latents(7, 3, 0));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(generator, evaluation_is_bit_deterministic) {
  const GeneratorModel g = random_generator(3, {6}, 4, 1, Activation::kSigmoid);
  const Tensor z = latents(9, 3, 2);
  EXPECT_EQ(generate(g, z), generate(g, z));
  const Tensor single = generate(g, Tensor(Shape{3}, std::vector<double>{0.1, 0.2, 0.3}));
  EXPECT_EQ(single.shape(), (Shape{1, 4}));
}

TEST(generator, output_gradients_match_finite_differences) {
  for (Activation act : {Activation::kTanh, Activation::kSigmoid}) {
    const GeneratorModel g = random_generator(2, {5, 3}, 3, 4, act);
    const Tensor z = latents(4, 2, 5);
    Graph graph;
    build_mlp(graph, g.net, graph.input("z"));
    for (std::size_t out = 0; out < 3; ++out) {
      graph.forward({{"z", z}}, g.params);
      Tensor seed(Shape{4, 3});
      for (std::size_t r = 0; r < 4; ++r) seed.at(r, out) = 1.0;
      const auto grad = graph.backward(seed);
      for (std::size_t i = 0; i < g.params.size(); ++i) {
        const double h = 1e-6;
        ParamVector plus = g.params, minus = g.params;
        plus.values()[i] += h;
        minus.values()[i] -= h;
        double fp = 0.0, fm = 0.0;
        const Tensor yp = generate(g.with_params(plus), z), ym = generate(g.with_params(minus), z);
        for (std::size_t r = 0; r < 4; ++r) {
          fp += yp.at(r, out);
          fm += ym.at(r, out);
        }
        EXPECT_LT(gradient_relative_error(grad[i], (fp - fm) / (2 * h)), 1e-4);
      }
    }
  }
}

TEST(generator, parse_names) {
  EXPECT_EQ(parse_activation("sigmoid"), Activation::kSigmoid);
  EXPECT_EQ(activation_name(Activation::kTanh), "tanh");
  EXPECT_THROW(parse_activation("relu"), ConfigError);
  EXPECT_EQ(parse_optimizer("gd"), Optimizer::kGradientDescent);
  EXPECT_THROW(parse_optimizer("sgd-momentum"), ConfigError);
}

TEST(prior, gaussian_prior_has_covariance_xi) {
  const PriorSpec p = PriorSpec::gaussian({1.0, -2.0}, 0.01);
  Rng rng(0);
  const Tensor z = p.sample(20000, 2, rng);
  double m = 0.0, v = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) m += z.at(r, 1);
  m /= 20000.0;
  for (std::size_t r = 0; r < z.rows(); ++r) v += (z.at(r, 1) - m) * (z.at(r, 1) - m);
  v /= 19999.0;
  EXPECT_NEAR(m, -2.0, 0.005);
  EXPECT_NEAR(v, 0.01, 0.0005);
  EXPECT_THROW(PriorSpec::gaussian({0.0}, 0.0), ConfigError);
  EXPECT_THROW(p.sample(3, 5, rng), ShapeError);
}

TEST(mmd, identical_sets_and_gradient) {
  Rng rng(1);
  const Tensor x = PriorSpec::standard_normal().sample(30, 2, rng);
  const std::vector<double> bw = {0.5, 1.0};
  EXPECT_NEAR(mmd_squared(x, x, bw, false), 0.0, 1e-15);
  const Tensor y = PriorSpec::standard_normal().sample(20, 2, rng);
  const Tensor grad = mmd_gradient(x, y, bw);
  for (std::size_t i = 0; i < y.size(); i += 7) {
    Tensor yp = y, ym = y;
    yp[i] += 1e-6;
    ym[i] -= 1e-6;
    const double fd = (mmd_squared(x, yp, bw, false) - mmd_squared(x, ym, bw, false)) / 2e-6;
    EXPECT_LT(gradient_relative_error(grad[i], fd), 1e-5);
  }
}

TEST(pretrain, affine_generator_fits_a_gaussian) {
  const auto spec = gaussian_spec({0.5, -1.0}, {0.25, 4.0});
  const GeneratorModel g = GeneratorModel::create(2, {}, 2);
  MmdConfig cfg;
  cfg.steps = 1500;
  cfg.learning_rate = 0.02;
  cfg.batch = 256;
  cfg.bandwidths = {0.5, 1.0, 2.0, 4.0};
  cfg.threshold = 1e-3;
  cfg.eval_size = 2000;
  const PretrainResult r = pretrain_generator(spec, g, cfg);
  EXPECT_LT(r.final_mmd, 1e-3);

  // Warm start from the fit: the retained eval MMD never increases.
  MmdConfig warm = cfg;
  warm.initialize = false;
  warm.steps = 300;
  const PretrainResult w = pretrain_generator(spec, g.with_params(r.params), warm);
  for (std::size_t i = 1; i < w.history.size(); ++i) EXPECT_LE(w.history[i], w.history[i - 1]);

  // Same seed, same checkpoint.
  MmdConfig short_cfg = cfg;
  short_cfg.steps = 50;
  short_cfg.threshold = 10.0;
  EXPECT_TRUE(pretrain_generator(spec, g, short_cfg).params == pretrain_generator(spec, g, short_cfg).params);
}

TEST(pretrain, threshold_miss_reports_best_value) {
  const auto spec = gaussian_spec({5.0, 5.0}, {1.0, 1.0});
  MmdConfig cfg;
  cfg.steps = 2;
  cfg.eval_every = 1;
  cfg.threshold = 1e-12;
  cfg.eval_size = 200;
  try {
    pretrain_generator(spec, GeneratorModel::create(2, {3}, 2), cfg);
    FAIL();
  } catch (const ThresholdNotReached& e) {
    EXPECT_GT(e.best(), 1e-12);
  }
}

TEST(posterior, separable_labels_are_learned) {
  Rng rng(3);
  const std::vector<double> w = {1.0, -2.0, 0.5};
  auto make = [&](std::size_t n, Tensor& x, std::vector<double>& y) {
    x = Tensor(Shape{n, 3});
    y.clear();
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n;) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        x.at(i, c) = normal(rng);
        s += w[c] * x.at(i, c);
      }
      if (std::abs(s) < 0.1) continue;  // keep a margin
      y.push_back(s > 0 ? 1.0 : 0.0);
      ++i;
    }
  };
  Tensor x, hx;
  std::vector<double> y, hy;
  make(2000, x, y);
  make(2000, hx, hy);
  PosteriorTrainConfig cfg;
  cfg.epochs = 500;
  cfg.learning_rate = 0.1;
  cfg.optimizer = Optimizer::kAdam;
  const auto r = train_posterior(x, y, hx, hy, PosteriorModel::create(3, {}), cfg);
  EXPECT_GE(r.holdout_accuracy, 0.99);
}

TEST(posterior, uninformative_labels_stay_near_half) {
  Rng rng(4);
  const Tensor x = PriorSpec::standard_normal().sample(1000, 2, rng);
  const Tensor hx = PriorSpec::standard_normal().sample(1000, 2, rng);
  const std::vector<double> y(1000, 0.5);
  PosteriorTrainConfig cfg;
  cfg.epochs = 200;
  PosteriorModel p = PosteriorModel::create(2, {4});
  p.params = train_posterior(x, y, hx, y, p, cfg).params;
  for (double v : p.probability(hx)) {
    EXPECT_GE(v, 0.45);
    EXPECT_LE(v, 0.55);
  }
}

TEST(posterior, toy_faces_fit_tracks_true_posterior) {
  const auto spec = AttributeMixtureSpec::load(test_support::source_dir() / "configs/toy_faces.spec");
  auto stack = [&](const std::vector<LabeledSample>& s, Tensor& x, std::vector<double>& y) {
    x = Tensor(Shape{s.size(), spec.dimension()});
    y.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t c = 0; c < spec.dimension(); ++c) x.at(i, c) = s[i].x[c];
      y.push_back(s[i].attributes.at("mustache"));
    }
  };
  Tensor x, hx;
  std::vector<double> y, hy;
  stack(sample(spec, 5000, 1), x, y);
  stack(sample(spec, 10000, 2), hx, hy);
  PosteriorTrainConfig cfg;
  cfg.epochs = 1500;
  cfg.learning_rate = 0.1;
  cfg.optimizer = Optimizer::kAdam;
  const auto r = train_posterior(x, y, hx, hy, PosteriorModel::create(spec.dimension(), {}), cfg);
  EXPECT_LT(r.holdout_calibration_error, 0.05);
}

TEST(posterior, rejects_bad_labels) {
  const Tensor x(Shape{2, 1});
  const std::vector<double> y = {0.5, 1.5};
  EXPECT_THROW(train_posterior(x, y, x, y, PosteriorModel::create(1, {}), {}), ConfigError);
  const std::vector<double> short_y = {0.5};
  EXPECT_THROW(train_posterior(x, short_y, x, short_y, PosteriorModel::create(1, {}), {}), ShapeError);
}

TEST(inversion, recovers_in_range_points) {
  const GeneratorModel g = random_generator(3, {8}, 4, 11);
  const Tensor x0 = generate(g, Tensor(Shape{3}, std::vector<double>{0.3, -0.5, 0.8}));
  InversionConfig cfg;
  cfg.tolerance = 1e-10;
  const InversionResult r = invert_latent(g, x0.values(), cfg);
  EXPECT_LT(r.error, 1e-8);
  EXPECT_EQ(r.init_errors.size(), cfg.restarts);
}

TEST(inversion, identity_generator_returns_the_target) {
  GeneratorModel g = GeneratorModel::create(3, {}, 3);
  auto w = g.params.segment_values("gen.0.weight");
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  const std::vector<double> x0 = {0.4, -1.2, 2.0};
  InversionConfig cfg;
  cfg.tolerance = 1e-18;
  const InversionResult r = invert_latent(g, x0, cfg);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.z[i], x0[i], 1e-8);
}

TEST(inversion, unreachable_target_reports_best_error) {
  const GeneratorModel g = random_generator(2, {4}, 3, 12, Activation::kSigmoid);
  const std::vector<double> far = {100.0, -100.0, 100.0};
  InversionConfig cfg;
  cfg.steps = 200;
  cfg.tolerance = 1e-6;
  try {
    invert_latent(g, far, cfg);
    FAIL();
  } catch (const ThresholdNotReached& e) {
    EXPECT_GT(e.best(), 1.0);
  }
  EXPECT_THROW(invert_latent(g, std::vector<double>{1.0}, cfg), ShapeError);
}
