#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pkd/error.hpp"
#include "pkd/graph.hpp"
#include "pkd/models.hpp"
#include "pkd/verify.hpp"

using namespace pkd;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = normal(rng);
  return t;
}

}  // namespace

TEST(tensor, shape_checks) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_THROW(Tensor::scalar(1.0).rows(), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(graph, affine_with_zero_weights_returns_bias) {
  ParamVector pv;
  pv.add_segment("w", Shape{3, 4});
  pv.add_segment("b", Shape{3});
  auto b = pv.segment_values("b");
  b[0] = 0.5;
  b[1] = -1.25;
  b[2] = 7.0;
  Graph g;
  g.affine(g.input("x"), g.parameter("w"), g.parameter("b"));
  Rng rng(1);
  const Tensor& y = g.forward({{"x", random_tensor({5, 4}, rng)}}, pv);
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_EQ(y.at(r, 0), 0.5);
    EXPECT_EQ(y.at(r, 1), -1.25);
    EXPECT_EQ(y.at(r, 2), 7.0);
  }
}

TEST(graph, sigmoid_of_zero_is_half) {
  Graph g;
  g.sigmoid(g.input("x"));
  const Tensor& y = g.forward({{"x", Tensor(Shape{3, 2}, 0.0)}}, ParamVector{});
  for (double v : y.values()) EXPECT_EQ(v, 0.5);
}

TEST(graph, tanh_mlp_matches_straight_line_recomputation) {
  MlpSpec spec{"net", {3, 4, 2}, Activation::kTanh};
  ParamVector pv = make_mlp_params(spec);
  Rng rng(0);
  init_mlp_params(spec, pv, rng);
  for (double& b : pv.segment_values("net.0.bias")) b = std::normal_distribution<double>(0.0, 0.5)(rng);
  for (double& b : pv.segment_values("net.1.bias")) b = std::normal_distribution<double>(0.0, 0.5)(rng);
  const Tensor x = random_tensor({2, 3}, rng);

  Graph g;
  build_mlp(g, spec, g.input("x"));
  const Tensor& y = g.forward({{"x", x}}, pv);

  const Tensor w0 = pv.segment_tensor("net.0.weight"), b0 = pv.segment_tensor("net.0.bias");
  const Tensor w1 = pv.segment_tensor("net.1.weight"), b1 = pv.segment_tensor("net.1.bias");
  for (std::size_t r = 0; r < 2; ++r) {
    double h[4];
    for (std::size_t j = 0; j < 4; ++j) {
      double s = b0[j];
      for (std::size_t i = 0; i < 3; ++i) s += w0.at(j, i) * x.at(r, i);
      h[j] = std::tanh(s);
    }
    for (std::size_t o = 0; o < 2; ++o) {
      double s = b1[o];
      for (std::size_t j = 0; j < 4; ++j) s += w1.at(o, j) * h[j];
      EXPECT_NEAR(y.at(r, o), s, 1e-12);
    }
  }
}

TEST(graph, constant_output_has_zero_gradient) {
  ParamVector pv;
  pv.add_segment("w", Shape{2, 2});
  Graph g;
  g.parameter("w");
  const NodeId c = g.constant(Tensor::scalar(3.0));
  g.set_output(g.mean(g.sigmoid(c)));
  g.forward({}, pv);
  for (double v : g.backward()) EXPECT_EQ(v, 0.0);
}

TEST(graph, mean_sigmoid_gradient_matches_central_differences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ParamVector pv;
    pv.add_segment("w", Shape{1, 4});
    pv.add_segment("b", Shape{1});
    for (double& v : pv.values()) v = std::normal_distribution<double>(0.0, 1.0)(rng);
    const Tensor x = random_tensor({6, 4}, rng);
    Graph g;
    g.mean(g.sigmoid(g.affine(g.input("x"), g.parameter("w"), g.parameter("b"))));
    g.forward({{"x", x}}, pv);
    const std::vector<double> grad = g.backward();
    const double h = 1e-6;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      ParamVector plus = pv, minus = pv;
      plus.values()[i] += h;
      minus.values()[i] -= h;
      const double fp = g.forward({{"x", x}}, plus).item();
      const double fm = g.forward({{"x", x}}, minus).item();
      EXPECT_LT(gradient_relative_error(grad[i], (fp - fm) / (2 * h)), 1e-4) << "seed " << seed << " i " << i;
    }
  }
}

TEST(graph, log_one_minus_sigmoid_derivative) {
  for (double s : {-2.0, 0.0, 3.0}) {
    ParamVector pv;
    pv.add_segment("s", Shape{1});
    pv.values()[0] = s;
    Graph g;
    g.mean(g.log(g.scale_shift(g.sigmoid(g.parameter("s")), -1.0, 1.0)));
    g.forward({}, pv);
    EXPECT_NEAR(g.backward()[0], -sigmoid(s), 1e-9) << "s = " << s;
  }
}

TEST(graph, backward_is_linear_in_seed) {
  MlpSpec spec{"net", {2, 5, 3}, Activation::kSigmoid};
  ParamVector pv = make_mlp_params(spec);
  Rng rng(3);
  init_mlp_params(spec, pv, rng);
  Graph g;
  build_mlp(g, spec, g.input("x"));
  g.forward({{"x", random_tensor({4, 2}, rng)}}, pv);
  const Tensor seed = random_tensor({4, 3}, rng);
  Tensor twice = seed;
  for (double& v : twice.values()) v *= 2.0;
  const auto a = g.backward(seed);
  const auto b = g.backward(twice);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], 2.0 * a[i], 1e-14);
}

TEST(graph, input_gradient_of_affine) {
  ParamVector pv;
  pv.add_segment("w", Shape{1, 2});
  pv.add_segment("b", Shape{1});
  pv.values()[0] = 3.0;
  pv.values()[1] = -2.0;
  Graph g;
  g.mean(g.affine(g.input("x"), g.parameter("w"), g.parameter("b")));
  g.forward({{"x", Tensor::matrix(2, 2, {1, 2, 3, 4})}}, pv);
  g.backward();
  const Tensor& gx = g.input_gradient("x");
  EXPECT_DOUBLE_EQ(gx.at(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(gx.at(1, 1), -1.0);
}

TEST(graph, errors) {
  Graph g;
  EXPECT_THROW(g.output(), Error);
  g.affine(g.input("x"), g.constant(Tensor(Shape{2, 3})), g.constant(Tensor(Shape{2})));
  EXPECT_THROW(g.backward(), Error);
  EXPECT_THROW(g.forward({{"x", Tensor(Shape{1, 4})}}, ParamVector{}), ShapeError);
  EXPECT_THROW(g.forward({}, ParamVector{}), Error);
  EXPECT_THROW(g.clamp(0, 1.0, 0.0), Error);

  Graph h;
  h.log(h.input("x"));
  EXPECT_THROW(h.forward({{"x", Tensor::row({-1.0})}}, ParamVector{}), NumericError);
}

TEST(graph, clamp_passes_gradient_only_inside) {
  ParamVector pv;
  pv.add_segment("a", Shape{3});
  pv.values()[0] = -2.0;
  pv.values()[1] = 0.5;
  pv.values()[2] = 2.0;
  Graph g;
  g.mean(g.clamp(g.parameter("a"), 0.0, 1.0));
  g.forward({}, pv);
  const auto grad = g.backward();
  EXPECT_EQ(grad[0], 0.0);
  EXPECT_DOUBLE_EQ(grad[1], 1.0 / 3.0);
  EXPECT_EQ(grad[2], 0.0);
}

TEST(graph, every_primitive_matches_finite_differences) {
  const GradientCheckStats s = primitive_gradient_check(20, 7, 1e-6);
  EXPECT_GT(s.components, 0u);
  EXPECT_LT(s.max_relative_error, 1e-4);
}
