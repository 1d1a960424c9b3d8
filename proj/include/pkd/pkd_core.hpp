#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pkd/models.hpp"

namespace pkd {

// Hyper-parameters of one extrapolation run.
struct PkdConfig {
  std::size_t steps = 10;         // K
  double epsilon = 1e-3;          // per-coordinate step size
  double lambda = 0.0;            // sparsity threshold
  std::optional<double> lambda0;  // if set, lambda = lambda0 * L
  std::size_t batch = 64;         // m
  std::uint64_t seed = 0;
  double xi = 0.01;               // Dirac mode prior covariance scale
  bool fixed_batch = false;       // reuse the first latent batch at every step
  std::size_t eval_size = 10000;  // latent codes in the fixed eval set
  bool record_gradients = false;  // keep n at every step (fixed-batch accounting)

  // Throws ConfigError on K < 1, epsilon <= 0, lambda < 0, m < 1, or (Dirac)
  // xi below kMinXi.
  void validate(bool dirac = false) const;
};

inline constexpr double kMinXi = 1e-6;

// lambda = lambda0 * L when lambda0 is set, otherwise cfg.lambda.
double resolve_lambda(const PkdConfig& cfg, double lipschitz);

// Solution of the one-step problem
//   min_{-eps <= d <= eps}  V . d + lambda |d|_1
// stored as per-coordinate signs (0 where the coordinate stays put).
struct SparseStep {
  std::vector<std::int8_t> signs;
  double epsilon = 0.0;

  bool active(std::size_t i) const { return signs[i] != 0; }
  std::size_t active_count() const;
  std::vector<double> delta() const;
  void apply(std::span<double> theta) const;
};

// Sign convention. The objective is J(theta) = mean log(1 - P_l(G_theta(z))),
// which extrapolation drives *down*; H = -J is the cross entropy that goes up.
// The loop passes the descent direction v = grad H = -grad J, and the step is
//   d_i = +eps * sign(v_i)   if |v_i| > lambda,   0 otherwise,
// i.e. the minimizer of  -v . d + lambda |d|_1  over the eps-box. Ties
// |v_i| == lambda stay inactive.
SparseStep closed_form_step(std::span<const double> v, double epsilon, double lambda);

// -grad J, the direction closed_form_step consumes.
std::vector<double> descent_direction(std::span<const double> objective_gradient);

struct KnowledgeObjective {
  double value = 0.0;                  // mean_i log(1 - P_l(G(z_i)))
  std::vector<double> gradient;        // d value / d theta (empty if not requested)
  std::vector<double> probabilities;   // P_l(G(z_i))
  std::vector<double> per_sample;      // log(1 - P_l(G(z_i)))
};

// Builds z -> G_theta -> P_l (frozen) -> log(clamp(1 - P_l)) -> mean.
KnowledgeObjective evaluate_knowledge_objective(const GeneratorModel& g, const PosteriorModel& p,
                                                const Tensor& z, bool with_gradient);

// grad_theta (1/m) sum_i log(1 - P_l(G_theta(z_i))). Throws NumericError
// naming the parameter segment when a component is non-finite.
std::vector<double> knowledge_gradient(const GeneratorModel& g, const PosteriorModel& p,
                                       const Tensor& z);

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double objective = 0.0;  // eval-set mean log(1 - P_l) after the step
  double objective_sem = 0.0;
  std::size_t active = 0;  // M_k
  std::size_t cumulative_active = 0;
  std::string checkpoint_hash;
  double batch_objective_before = 0.0;
  double batch_objective_after = 0.0;
  double predicted_descent = 0.0;  // eps * sum over active |v_i|
  double gradient_inf_norm = 0.0;  // |v|_inf
  std::vector<double> gradient;    // v = -grad J, only with record_gradients
  std::vector<std::int8_t> signs;  // only with record_gradients
};

struct ExtrapolationTrace {
  double lambda = 0.0;
  double epsilon = 0.0;
  bool fixed_batch = false;
  std::string status = "ok";  // "ok" or "saturated"
  double initial_objective = 0.0;
  double initial_objective_sem = 0.0;
  std::string initial_hash;
  std::vector<StepRecord> steps;
  std::vector<std::uint8_t> cumulative_mask;

  std::size_t cumulative_active() const;
  // One row per step, preceded by a step-0 row for theta^X.
  std::string to_csv() const;
};

struct PkdResult {
  ParamVector theta;
  ExtrapolationTrace trace;
};

// The fixed eval set of a run: cfg.eval_size draws from g.prior on the "eval"
// substream of cfg.seed.
Tensor eval_latents(const GeneratorModel& g, const PkdConfig& cfg);

// Principal knowledge descent with the generator's own prior. Uses
// cfg.lambda as given; resolve lambda0 with resolve_lambda beforehand.
PkdResult run_pkd(const GeneratorModel& g, const PosteriorModel& p, const PkdConfig& cfg);

struct DiracResult {
  PkdResult run;
  std::vector<double> z0;
  double reconstruction_error = 0.0;
};

// Extrapolates a single sample: inverts x0 to z0, then runs PKD with prior
// N(z0, xi I).
DiracResult run_dirac(const GeneratorModel& g, const PosteriorModel& p, std::span<const double> x0,
                      const PkdConfig& cfg, const InversionConfig& inversion);

// Same, with a known latent code.
PkdResult run_dirac_at(const GeneratorModel& g, const PosteriorModel& p, std::span<const double> z0,
                       const PkdConfig& cfg);

// Largest |grad J|_inf over `batches` independent batches of size m: the
// smallest lambda at or above which no coordinate activates on them.
double lambda_max_estimate(const GeneratorModel& g, const PosteriorModel& p, const PriorSpec& prior,
                           std::size_t batches, std::size_t m, std::uint64_t seed);

// Largest |grad J|_inf over the batches a run with `cfg` would draw at
// theta_x (the first batch in fixed-batch mode). Every lambda at or above it
// leaves theta_x unchanged, since ties stay inactive.
double run_lambda_max(const GeneratorModel& g, const PosteriorModel& p, const PkdConfig& cfg);

}  // namespace pkd
