#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pkd/config.hpp"
#include "pkd/pkd_core.hpp"

namespace pkd {

// Finite-support world for exact checks. p_h and z are filled in by
// build_hypothetical; before that has_hypothetical() is false.
struct DiscreteWorld {
  std::vector<std::string> atoms;
  std::vector<double> p_x;
  std::vector<double> p_l;  // posterior of the knowledge label per atom
  std::vector<double> p_g;  // generator distribution; defaults to p_x
  std::vector<double> p_h;  // hypothetical distribution
  double z = 0.0;           // normalizer of p_g * odds(p_l)

  std::size_t size() const { return p_x.size(); }
  bool has_hypothetical() const { return !p_h.empty(); }
  // Probabilities sum to 1 (1e-12), p_l strictly inside (0,1), equal lengths.
  void validate() const;

  // atoms = a b c / p_x = ... / p_l = ... / p_g = ... (optional)
  static DiscreteWorld from_config(const KeyValueConfig& cfg);
  static DiscreteWorld load(const std::filesystem::path& path);
};

inline constexpr double kProbabilityTolerance = 1e-12;

// p_h ∝ p_g * p_l / (1 - p_l), with the normalizer recorded in z.
// Throws NumericError if any p_l >= 1 - 1e-12.
DiscreteWorld build_hypothetical(DiscreteWorld w);

// Shifts every posterior logit by the same offset so that
// sum p_g * p_l/(1-p_l) == 1. Closed form: the offset is log Z.
DiscreteWorld calibrate(DiscreteWorld w);

// D*(x) = p_h / (p_h + p_g), the per-atom maximizer of
// p_h log d + p_g log(1 - d).
std::vector<double> optimal_discriminator(const DiscreteWorld& w);

// argmax over d in (0,1) of a log d + b log(1-d), by bisection on the sign of
// the derivative. Independent of the closed form a/(a+b).
double bisect_discriminator(double a, double b, double resolution = 1e-12);

// Per-coordinate minimizer of V.x + lambda |x|_1 over the box [-eps, eps]^N,
// evaluated at the candidates {-eps, 0, +eps}; ties go to 0.
std::vector<double> lp_oracle(std::span<const double> v, double epsilon, double lambda);

double lp_objective(std::span<const double> v, std::span<const double> x, double lambda);

struct GridSolution {
  std::vector<double> x;
  double value = 0.0;
};

// Brute force over the joint box on a grid of spacing eps/resolution, without
// using separability. Only for N <= 3.
GridSolution lp_grid_oracle(std::span<const double> v, double epsilon, double lambda,
                            int resolution = 100);

struct DualCertificate {
  std::vector<double> beta;   // multipliers of x_i <= eps
  std::vector<double> gamma;  // multipliers of -eps <= x_i
  std::vector<double> primal_x;
  double primal = 0.0;
  double dual = 0.0;
  double feasibility = 0.0;    // |V + beta - gamma|_inf (must be <= lambda)
  double slackness = 0.0;      // max complementary-slackness residual
  double gap() const { return primal - dual; }
};

inline constexpr double kCertificateTolerance = 1e-12;

// Builds the three-case multipliers and checks them against lp_oracle's
// primal. Throws CheckFailure naming the violated condition.
DualCertificate dual_solution(std::span<const double> v, double epsilon, double lambda);

// i, V_i, x_i, beta_i, gamma_i rows plus a summary comment line.
std::string certificate_csv(std::span<const double> v, const DualCertificate& cert);

struct StepAccountingRow {
  std::size_t step = 0;
  std::size_t active = 0;     // M_k
  double predicted = 0.0;     // eps * sum_active |v_i|
  double bound = 0.0;         // M_k * lambda * eps
  double realized = 0.0;      // batch objective before - after
  bool bound_holds = false;   // every active |v_i| > lambda, hence predicted >= bound
  bool realized_ok = false;   // realized >= fraction * predicted
  bool flagged = false;       // |realized - predicted| > C eps^2
};

struct StepAccountingReport {
  std::vector<StepAccountingRow> rows;
  bool all_bounds_hold() const;
  bool all_realized_ok() const;
  std::size_t flagged() const;
  std::string to_csv() const;
};

// Re-derives the first-order descent of every step of a fixed-batch trace
// that was recorded with gradients. Throws ConfigError for other traces and
// CheckFailure if the recorded signs are not the closed-form step of the
// recorded gradient.
StepAccountingReport verify_step_accounting(const ExtrapolationTrace& trace, double lambda,
                                            double epsilon, double curvature,
                                            double realized_fraction = 0.5);

}  // namespace pkd
