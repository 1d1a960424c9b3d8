#include "pkd/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pkd/io.hpp"

namespace pkd {

namespace {

std::string weight_name(const MlpSpec& s, std::size_t layer) {
  return s.prefix + "." + std::to_string(layer) + ".weight";
}
std::string bias_name(const MlpSpec& s, std::size_t layer) {
  return s.prefix + "." + std::to_string(layer) + ".bias";
}

Tensor as_batch(const Tensor& z, std::size_t dim) {
  if (z.rank() == 1) {
    if (z.size() != dim) {
      throw ShapeError("expected a vector of dimension " + std::to_string(dim) + ", got " +
                       shape_string(z.shape()));
    }
    return Tensor(Shape{1, dim}, z.data());
  }
  if (z.rank() != 2 || z.cols() != dim) {
    throw ShapeError("expected [batch, " + std::to_string(dim) + "], got " + shape_string(z.shape()));
  }
  return z;
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + name + "' (expected tanh or sigmoid)");
}

std::string activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "sigmoid";
}

ParamVector make_mlp_params(const MlpSpec& spec) {
  if (spec.widths.size() < 2) throw ConfigError("mlp '" + spec.prefix + "': need at least two widths");
  ParamVector pv;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    pv.add_segment(weight_name(spec, l), Shape{spec.widths[l + 1], spec.widths[l]});
    pv.add_segment(bias_name(spec, l), Shape{spec.widths[l + 1]});
  }
  return pv;
}

void init_mlp_params(const MlpSpec& spec, ParamVector& params, Rng& rng, double gain) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const double fan_in = static_cast<double>(std::max<std::size_t>(spec.widths[l], 1));
    const double sd = gain / std::sqrt(fan_in);
    for (double& w : params.segment_values(weight_name(spec, l))) w = sd * normal(rng);
    for (double& b : params.segment_values(bias_name(spec, l))) b = 0.0;
  }
}

NodeId build_mlp(Graph& graph, const MlpSpec& spec, NodeId x, const ParamVector* frozen) {
  NodeId h = x;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::string wn = weight_name(spec, l), bn = bias_name(spec, l);
    NodeId w = frozen ? graph.constant(frozen->segment_tensor(wn), wn) : graph.parameter(wn);
    NodeId b = frozen ? graph.constant(frozen->segment_tensor(bn), bn) : graph.parameter(bn);
    h = graph.affine(h, w, b, spec.prefix + "." + std::to_string(l));
    if (l + 1 < spec.layers()) {
      h = spec.activation == Activation::kTanh ? graph.tanh(h) : graph.sigmoid(h);
    }
  }
  return h;
}

PriorSpec PriorSpec::gaussian(std::vector<double> center, double xi) {
  if (!(xi > 0.0)) throw ConfigError("gaussian prior: xi must be positive");
  PriorSpec p;
  p.kind = Kind::kGaussian;
  p.center = std::move(center);
  p.xi = xi;
  return p;
}

Tensor PriorSpec::sample(std::size_t m, std::size_t latent_dim, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z(Shape{m, latent_dim});
  const bool shifted = kind == Kind::kGaussian;
  if (shifted && center.size() != latent_dim) {
    throw ShapeError("gaussian prior: center has dimension " + std::to_string(center.size()) +
                     ", latent dimension is " + std::to_string(latent_dim));
  }
  const double sd = shifted ? std::sqrt(xi) : 1.0;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < latent_dim; ++i) {
      const double e = normal(rng);
      z.at(r, i) = shifted ? center[i] + sd * e : e;
    }
  }
  return z;
}

GeneratorModel GeneratorModel::create(std::size_t latent_dim, std::vector<std::size_t> hidden,
                                      std::size_t output_dim, Activation activation) {
  GeneratorModel g;
  g.net.prefix = "gen";
  g.net.activation = activation;
  g.net.widths.push_back(latent_dim);
  g.net.widths.insert(g.net.widths.end(), hidden.begin(), hidden.end());
  g.net.widths.push_back(output_dim);
  g.params = make_mlp_params(g.net);
  return g;
}

GeneratorModel GeneratorModel::with_params(ParamVector theta) const {
  if (!theta.same_layout(params)) throw ShapeError("generator: parameter layout mismatch");
  GeneratorModel out = *this;
  out.params = std::move(theta);
  return out;
}

Tensor generate(const GeneratorModel& g, const Tensor& z) {
  Graph graph;
  build_mlp(graph, g.net, graph.input("z"));
  return graph.forward({{"z", as_batch(z, g.latent_dim())}}, g.params);
}

PosteriorModel PosteriorModel::create(std::size_t input_dim, std::vector<std::size_t> hidden,
                                      std::string prefix) {
  PosteriorModel p;
  p.net.prefix = std::move(prefix);
  p.net.widths.push_back(input_dim);
  p.net.widths.insert(p.net.widths.end(), hidden.begin(), hidden.end());
  p.net.widths.push_back(1);
  p.params = make_mlp_params(p.net);
  return p;
}

NodeId PosteriorModel::build(Graph& graph, NodeId x) const {
  NodeId logit = build_mlp(graph, net, x, &params);
  return graph.clamp(graph.sigmoid(logit), kProbabilityFloor, kProbabilityCeil);
}

std::vector<double> PosteriorModel::probability(const Tensor& x) const {
  Graph graph;
  build(graph, graph.input("x"));
  const Tensor& out = graph.forward({{"x", as_batch(x, net.input_dim())}}, ParamVector{});
  return out.data();
}

double PosteriorModel::probability(std::span<const double> x) const {
  return probability(Tensor(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end())))[0];
}

namespace {

// Sum of kernels and, optionally, its gradient wrt the first argument.
double kernel_sum(std::span<const double> a, std::span<const double> b,
                  std::span<const double> bandwidths, double* dk_dsq = nullptr) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  double k = 0.0, dk = 0.0;
  for (double s : bandwidths) {
    const double inv = 1.0 / (2.0 * s * s);
    const double e = std::exp(-sq * inv);
    k += e;
    dk -= e * inv;
  }
  if (dk_dsq) *dk_dsq = dk;
  return k;
}

double mean_kernel(const Tensor& a, const Tensor& b, std::span<const double> bw, bool skip_diag) {
  CompensatedSum s;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      if (skip_diag && i == j) continue;
      s.add(kernel_sum(a.row_span(i), b.row_span(j), bw));
    }
  }
  const double n = skip_diag ? static_cast<double>(a.rows() * (a.rows() - 1))
                             : static_cast<double>(a.rows() * b.rows());
  return s.value() / n;
}

}  // namespace

double mmd_squared(const Tensor& x, const Tensor& y, std::span<const double> bandwidths,
                   bool unbiased) {
  if (x.cols() != y.cols()) throw ShapeError("mmd: dimension mismatch");
  return mean_kernel(x, x, bandwidths, unbiased) + mean_kernel(y, y, bandwidths, unbiased) -
         2.0 * mean_kernel(x, y, bandwidths, false);
}

Tensor mmd_gradient(const Tensor& x, const Tensor& y, std::span<const double> bandwidths) {
  const std::size_t n = y.rows(), m = x.rows(), d = y.cols();
  Tensor g(y.shape());
  const double cyy = 2.0 / static_cast<double>(n * n);
  const double cxy = -2.0 / static_cast<double>(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    auto yi = y.row_span(i);
    // d/dy_i k(y_i, v) = dk/dsq * 2 (y_i - v)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double dk = 0.0;
      kernel_sum(yi, y.row_span(j), bandwidths, &dk);
      auto yj = y.row_span(j);
      // Both k(y_i, y_j) and k(y_j, y_i) terms of the double sum.
      for (std::size_t c = 0; c < d; ++c) g.at(i, c) += cyy * 2.0 * dk * (yi[c] - yj[c]);
    }
    for (std::size_t j = 0; j < m; ++j) {
      double dk = 0.0;
      kernel_sum(yi, x.row_span(j), bandwidths, &dk);
      auto xj = x.row_span(j);
      for (std::size_t c = 0; c < d; ++c) g.at(i, c) += cxy * 2.0 * dk * (yi[c] - xj[c]);
    }
  }
  return g;
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::kAdam;
  if (name == "gd" || name == "sgd") return Optimizer::kGradientDescent;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected adam or gd)");
}

ParamOptimizer::ParamOptimizer(Optimizer kind, double learning_rate, std::size_t size)
    : kind_(kind), lr_(learning_rate) {
  if (kind_ == Optimizer::kAdam) {
    m_.assign(size, 0.0);
    v_.assign(size, 0.0);
  }
}

void ParamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  if (kind_ == Optimizer::kGradientDescent) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
    return;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
  }
}

PretrainResult pretrain_generator(const AttributeMixtureSpec& spec, const GeneratorModel& g,
                                  const MmdConfig& cfg) {
  if (g.output_dim() != spec.dimension()) {
    throw ShapeError("pretrain: generator output dimension " + std::to_string(g.output_dim()) +
                     " does not match data dimension " + std::to_string(spec.dimension()));
  }
  ParamVector theta = g.params;
  if (cfg.initialize) {
    Rng init = make_rng(cfg.seed, "init");
    init_mlp_params(g.net, theta, init, cfg.init_gain);
  }

  Rng eval_rng = make_rng(cfg.seed, "eval");
  const Tensor eval_x = sample_points(spec, cfg.eval_size, substream_seed(cfg.seed, "eval-data"));
  const Tensor eval_z = g.prior.sample(cfg.eval_size, g.latent_dim(), eval_rng);
  auto eval_mmd = [&](const ParamVector& p) {
    return mmd_squared(eval_x, generate(g.with_params(p), eval_z), cfg.bandwidths, true);
  };

  Rng data_rng = make_rng(cfg.seed, "train-data");
  Rng z_rng = make_rng(cfg.seed, "train-z");
  Graph graph;
  build_mlp(graph, g.net, graph.input("z"));

  PretrainResult result;
  ParamOptimizer opt(cfg.optimizer, cfg.learning_rate, theta.size());
  ParamVector best = theta;
  double best_mmd = eval_mmd(theta);
  result.history.push_back(best_mmd);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Tensor x = sample_points(spec, cfg.batch, data_rng());
    const Tensor z = g.prior.sample(cfg.batch, g.latent_dim(), z_rng);
    const Tensor& y = graph.forward({{"z", z}}, theta);
    const Tensor seed = mmd_gradient(x, y, cfg.bandwidths);
    const std::vector<double> grad = graph.backward(seed);
    auto vals = theta.values();
    opt.step(vals, grad);
    if (!std::all_of(vals.begin(), vals.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericError("pretrain: parameters diverged at step " + std::to_string(step));
    }
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      const double m = eval_mmd(theta);
      if (m < best_mmd) {
        best_mmd = m;
        best = theta;
      }
      result.history.push_back(best_mmd);
    }
  }
  result.params = std::move(best);
  result.final_mmd = best_mmd;
  if (!(best_mmd < cfg.threshold)) {
    throw ThresholdNotReached("pretrain: final MMD^2 " + format_double(best_mmd) +
                                  " did not reach threshold " + format_double(cfg.threshold),
                              best_mmd);
  }
  return result;
}

PosteriorTrainResult train_posterior(const Tensor& x, std::span<const double> labels,
                                     const Tensor& holdout_x, std::span<const double> holdout_labels,
                                     const PosteriorModel& p, const PosteriorTrainConfig& cfg) {
  if (x.rows() != labels.size() || holdout_x.rows() != holdout_labels.size()) {
    throw ShapeError("train_posterior: label count does not match samples");
  }
  for (double y : labels) {
    if (!(y >= 0.0 && y <= 1.0)) throw ConfigError("train_posterior: labels must lie in [0,1]");
  }
  ParamVector theta = p.params;
  Rng init = make_rng(cfg.seed, "posterior-init");
  init_mlp_params(p.net, theta, init);
  // Logistic output starts at zero weights so the first iterate predicts 0.5.
  for (double& w : theta.segment_values(p.net.prefix + "." + std::to_string(p.net.layers() - 1) + ".weight")) {
    w = 0.0;
  }

  Graph graph;
  build_mlp(graph, p.net, graph.input("x"));
  const std::size_t n = x.rows();
  auto bce = [&](const Tensor& logits, std::span<const double> y) {
    CompensatedSum s;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double l = logits[i];
      // -[y log sigma(l) + (1-y) log(1 - sigma(l))] = softplus(l) - y l
      const double softplus = l > 0 ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l));
      s.add(softplus - y[i] * l);
    }
    return s.value() / static_cast<double>(y.size());
  };

  double loss = 0.0;
  ParamOptimizer opt(cfg.optimizer, cfg.learning_rate, theta.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Tensor& logits = graph.forward({{"x", x}}, theta);
    loss = bce(logits, labels);
    if (!std::isfinite(loss)) {
      throw NumericError("train_posterior: loss diverged at epoch " + std::to_string(epoch));
    }
    Tensor seed(logits.shape());
    for (std::size_t i = 0; i < n; ++i) seed[i] = (sigmoid(logits[i]) - labels[i]) / static_cast<double>(n);
    const auto grad = graph.backward(seed);
    opt.step(theta.values(), grad);
  }
  const Tensor& logits = graph.forward({{"x", x}}, theta);
  loss = bce(logits, labels);
  if (!std::isfinite(loss)) throw NumericError("train_posterior: loss diverged");

  PosteriorTrainResult out;
  out.params = theta;
  out.train_loss = loss;
  PosteriorModel trained = p;
  trained.params = theta;
  const auto probs = trained.probability(holdout_x);
  CompensatedSum gap;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    gap.add(std::abs(probs[i] - holdout_labels[i]));
    if ((probs[i] > 0.5) == (holdout_labels[i] > 0.5)) ++agree;
  }
  const double h = static_cast<double>(std::max<std::size_t>(probs.size(), 1));
  out.holdout_calibration_error = gap.value() / h;
  out.holdout_accuracy = static_cast<double>(agree) / h;
  return out;
}

InversionResult invert_latent(const GeneratorModel& g, std::span<const double> x0,
                              const InversionConfig& cfg) {
  const std::size_t k = g.latent_dim(), d = g.output_dim();
  if (x0.size() != d) {
    throw ShapeError("invert_latent: target has dimension " + std::to_string(x0.size()) +
                     ", generator outputs " + std::to_string(d));
  }
  if (cfg.restarts == 0) throw ConfigError("invert_latent: restarts must be at least 1");
  Graph graph;
  build_mlp(graph, g.net, graph.input("z"));
  auto loss_at = [&](const std::vector<double>& z, Tensor* residual) {
    const Tensor& y = graph.forward({{"z", Tensor(Shape{1, k}, z)}}, g.params);
    double f = 0.0;
    if (residual) *residual = Tensor(Shape{1, d});
    for (std::size_t i = 0; i < d; ++i) {
      const double r = y[i] - x0[i];
      f += r * r;
      if (residual) (*residual)[i] = 2.0 * r;
    }
    return f;
  };

  Rng rng = make_rng(cfg.seed, "inversion");
  std::normal_distribution<double> normal(0.0, 1.0);
  InversionResult best;
  best.error = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    std::vector<double> z(k);
    for (double& v : z) v = normal(rng);
    Tensor seed;
    double f = loss_at(z, &seed);
    best.init_errors.push_back(f);
    double step = cfg.initial_step;
    for (std::size_t it = 0; it < cfg.steps && f > 0.01 * cfg.tolerance; ++it) {
      graph.backward(seed);
      const Tensor grad = graph.input_gradient("z");
      double gsq = 0.0;
      for (double v : grad.values()) gsq += v * v;
      if (gsq == 0.0) break;
      bool accepted = false;
      for (int bt = 0; bt < 60; ++bt) {
        std::vector<double> trial(k);
        for (std::size_t i = 0; i < k; ++i) trial[i] = z[i] - step * grad[i];
        Tensor trial_seed;
        const double ft = loss_at(trial, &trial_seed);
        if (ft <= f - 1e-4 * step * gsq) {
          z = std::move(trial);
          f = ft;
          seed = std::move(trial_seed);
          accepted = true;
          step *= 2.0;
          break;
        }
        step *= 0.5;
      }
      // The last forward() was the accepted trial, so the graph is in sync.
      if (!accepted) break;
    }
    if (f < best.error) {
      best.error = f;
      best.z = z;
    }
  }
  if (!(best.error <= cfg.tolerance)) {
    throw ThresholdNotReached("invert_latent: best reconstruction error " + format_double(best.error) +
                                  " exceeds tolerance " + format_double(cfg.tolerance),
                              best.error);
  }
  return best;
}

}  // namespace pkd
