#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pkd/error.hpp"
#include "pkd/graph.hpp"
#include "pkd/numeric.hpp"
#include "pkd/param_vector.hpp"
#include "pkd/synth_data.hpp"

namespace pkd {

// Lower/upper bound applied to every posterior probability.
inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kProbabilityCeil = 1.0 - 1e-12;

enum class Activation { kTanh, kSigmoid };
Activation parse_activation(const std::string& name);
std::string activation_name(Activation a);

// Fully connected net: widths[0] inputs, `activation` on hidden layers, linear
// output layer. Segments are "<prefix>.<layer>.weight" ([out,in]) and
// "<prefix>.<layer>.bias" ([out]).
struct MlpSpec {
  std::string prefix;
  std::vector<std::size_t> widths;
  Activation activation = Activation::kTanh;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layers() const { return widths.size() - 1; }
};

ParamVector make_mlp_params(const MlpSpec& spec);
// Weights ~ N(0, gain^2 / fan_in), biases zero.
void init_mlp_params(const MlpSpec& spec, ParamVector& params, Rng& rng, double gain = 1.0);
// Appends the network to `graph`. When `frozen` is given, weights enter as
// constants (no gradient flows to them); otherwise as parameter nodes.
NodeId build_mlp(Graph& graph, const MlpSpec& spec, NodeId x, const ParamVector* frozen = nullptr);

struct PriorSpec {
  enum class Kind { kStandardNormal, kGaussian };
  Kind kind = Kind::kStandardNormal;
  std::vector<double> center;  // kGaussian only
  double xi = 1.0;             // kGaussian: covariance xi * I

  static PriorSpec standard_normal() { return {}; }
  static PriorSpec gaussian(std::vector<double> center, double xi);

  // [m, latent_dim] batch of draws.
  Tensor sample(std::size_t m, std::size_t latent_dim, Rng& rng) const;
};

struct GeneratorModel {
  MlpSpec net;
  ParamVector params;
  PriorSpec prior;

  static GeneratorModel create(std::size_t latent_dim, std::vector<std::size_t> hidden,
                               std::size_t output_dim,
                               Activation activation = Activation::kTanh);

  std::size_t latent_dim() const { return net.input_dim(); }
  std::size_t output_dim() const { return net.output_dim(); }
  GeneratorModel with_params(ParamVector theta) const;
};

// G_theta(z). z is [batch, latent] or a single latent vector [latent].
Tensor generate(const GeneratorModel& g, const Tensor& z);

struct PosteriorModel {
  MlpSpec net;
  ParamVector params;

  static PosteriorModel create(std::size_t input_dim, std::vector<std::size_t> hidden,
                               std::string prefix = "post");

  // Appends logit -> sigmoid -> clamp to the graph; output is [batch, 1].
  NodeId build(Graph& graph, NodeId x) const;
  std::vector<double> probability(const Tensor& x) const;
  double probability(std::span<const double> x) const;
};

// Raised when an iterative fit stops short of its configured target.
class ThresholdNotReached : public NumericError {
 public:
  ThresholdNotReached(const std::string& what, double best) : NumericError(what), best_(best) {}
  double best() const { return best_; }

 private:
  double best_;
};

enum class Optimizer { kAdam, kGradientDescent };

Optimizer parse_optimizer(std::string_view name);

// First-order optimizer state over a flat parameter vector.
class ParamOptimizer {
 public:
  ParamOptimizer(Optimizer kind, double learning_rate, std::size_t size);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  Optimizer kind_;
  double lr_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct MmdConfig {
  std::size_t steps = 3000;
  double learning_rate = 0.005;
  Optimizer optimizer = Optimizer::kAdam;
  std::size_t batch = 256;
  std::vector<double> bandwidths = {0.25, 0.5, 1.0, 2.0};
  double threshold = 2e-3;
  std::size_t eval_size = 2000;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  double init_gain = 1.0;
  bool initialize = true;  // false: start from g.params (warm start)
};

struct PretrainResult {
  ParamVector params;
  double final_mmd = 0.0;
  // Eval-set MMD of the retained checkpoint after each evaluation.
  std::vector<double> history;
};

// Squared MMD with a sum of Gaussian kernels exp(-|a-b|^2 / (2 s^2)).
// Biased (V-statistic) when `unbiased` is false.
double mmd_squared(const Tensor& x, const Tensor& y, std::span<const double> bandwidths,
                   bool unbiased = true);
// d(biased MMD^2)/dy for generated samples y against targets x.
Tensor mmd_gradient(const Tensor& x, const Tensor& y, std::span<const double> bandwidths);

PretrainResult pretrain_generator(const AttributeMixtureSpec& spec, const GeneratorModel& g,
                                  const MmdConfig& cfg);

struct PosteriorTrainConfig {
  std::size_t epochs = 2000;
  double learning_rate = 1.0;
  Optimizer optimizer = Optimizer::kGradientDescent;
  std::uint64_t seed = 0;
};

struct PosteriorTrainResult {
  ParamVector params;
  double train_loss = 0.0;
  double holdout_calibration_error = 0.0;  // mean |p_model - label|
  double holdout_accuracy = 0.0;           // agreement of (p > 0.5) with (label > 0.5)
};

// Full-batch first-order training (GD or Adam) on binary cross-entropy with
// soft labels.
PosteriorTrainResult train_posterior(const Tensor& x, std::span<const double> labels,
                                     const Tensor& holdout_x, std::span<const double> holdout_labels,
                                     const PosteriorModel& p, const PosteriorTrainConfig& cfg);

struct InversionConfig {
  std::size_t restarts = 8;
  std::size_t steps = 3000;
  double initial_step = 0.1;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
};

struct InversionResult {
  std::vector<double> z;
  double error = 0.0;                // |G(z) - x0|^2
  std::vector<double> init_errors;   // error at each restart's starting point
};

// Multi-restart gradient descent (backtracking line search) on |G(z) - x0|^2.
InversionResult invert_latent(const GeneratorModel& g, std::span<const double> x0,
                              const InversionConfig& cfg);

}  // namespace pkd
