#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pkd/numeric.hpp"
#include "pkd/pkd_core.hpp"

namespace pkd {

// A fixed scalar function of a generated sample, differentiable through G.
struct Probe {
  enum class Kind { kPosterior, kLinear };
  std::string name;
  Kind kind = Kind::kLinear;
  PosteriorModel model;          // kPosterior
  std::vector<double> weights;   // kLinear: f(x) = weights . x + offset
  double offset = 0.0;

  // Appends the probe to `graph`; output is [batch, 1].
  NodeId build(Graph& graph, NodeId x) const;
};

class ProbeSet {
 public:
  void add_posterior(std::string name, PosteriorModel model);
  void add_coordinate(std::string name, std::size_t index, std::size_t dim);
  void add_linear(std::string name, std::vector<double> weights, double offset = 0.0);

  const std::vector<Probe>& probes() const { return probes_; }
  bool empty() const { return probes_.empty(); }
  ProbeSet only(Probe::Kind kind) const;

 private:
  std::vector<Probe> probes_;
};

// f(G_theta(z)) for every row of z.
std::vector<double> probe_values(const GeneratorModel& g, const Probe& probe, const Tensor& z);

// Monte Carlo mean of log(1 - P_l(G(z))) with its standard error.
MeanStat objective_estimate(const GeneratorModel& g, const PosteriorModel& p, const Tensor& z);

// objective(theta_x) - objective(theta_k): positive when extrapolation
// raised the knowledge.
double delta_descent(const GeneratorModel& g, const ParamVector& theta_x, const ParamVector& theta_k,
                     const PosteriorModel& p, const Tensor& z);

// Share of rows with P_l(G_theta(z)) > threshold.
double knowledge_fraction(const GeneratorModel& g, const ParamVector& theta, const PosteriorModel& p,
                          const Tensor& z, double threshold = 0.5);

struct RemainingShift {
  std::vector<std::pair<std::string, double>> per_probe;  // mean |f(G_K(z)) - f(G_X(z))|
  double aggregate = 0.0;                                  // max over probes

  double of(const std::string& name) const;
};

RemainingShift delta_remaining(const GeneratorModel& g, const ParamVector& theta_x,
                               const ParamVector& theta_k, const ProbeSet& probes, const Tensor& z);

// max over sampled theta in the inf-ball of `radius` around theta_x (theta_x
// itself first) and rows of z of |grad_theta f(G_theta(z))|_inf. A lower
// bound on the supremum.
double lipschitz_estimate(const GeneratorModel& g, const ParamVector& theta_x, const ProbeSet& probes,
                          double radius, std::size_t theta_samples, const Tensor& z,
                          std::uint64_t seed);

// |log_change| / (|dG|^2 / d). Throws NumericError("no pixel change") when
// the squared distance is at most 1e-18.
double ppr_value(double log_change, std::size_t d, double squared_distance);

double ppr(const GeneratorModel& g, const ParamVector& theta_x, const ParamVector& theta,
           const PosteriorModel& p, std::span<const double> z);

// Mean and standard deviation of PPR over the rows of z.
MeanStat ppr_stats(const GeneratorModel& g, const ParamVector& theta_x, const ParamVector& theta,
                   const PosteriorModel& p, const Tensor& z);

// |union of active masks| / N.
double psr(const ExtrapolationTrace& trace, std::size_t n);

struct MetricsOptions {
  std::size_t lipschitz_thetas = 4;
  std::size_t lipschitz_latents = 32;
  std::uint64_t seed = 0;
  bool compute_ppr = true;
};

struct MetricsReport {
  double lambda = 0.0;
  double epsilon = 0.0;
  std::size_t steps = 0;
  std::string status;
  double objective_before = 0.0;
  double objective_before_sem = 0.0;
  double objective_after = 0.0;
  double objective_after_sem = 0.0;
  double delta = 0.0;            // Δ
  double delta_remaining = 0.0;  // δ over the posterior probes (max)
  RemainingShift shifts;         // every probe, reported separately
  double lipschitz = 0.0;        // L over the posterior probes
  double ratio = 0.0;            // Δ / δ
  double ratio_bound = 0.0;      // λ / L, reported beside the ratio
  double ppr_mean = std::numeric_limits<double>::quiet_NaN();
  double ppr_sd = std::numeric_limits<double>::quiet_NaN();
  double psr = 0.0;
  double knowledge_before = 0.0;  // fraction with P_l > 0.5
  double knowledge_after = 0.0;

  std::string to_csv() const;
};

MetricsReport compute_report(const GeneratorModel& g, const ParamVector& theta_k,
                             const PosteriorModel& p, const ProbeSet& probes,
                             const ExtrapolationTrace& trace, const Tensor& eval_z,
                             const MetricsOptions& opts);

struct SweepRow {
  double lambda = 0.0;
  double delta = 0.0;
  double delta_remaining = 0.0;
  double ratio = 0.0;
  double ratio_bound = 0.0;
  double psr = 0.0;
  double ppr_mean = 0.0;
  double ppr_sd = 0.0;
  std::size_t active_total = 0;  // sum over steps of M_k
  double knowledge_after = 0.0;
  std::string status;
};

struct SweepTable {
  double lipschitz = 0.0;
  std::vector<SweepRow> rows;

  std::string to_csv() const;
  std::string to_svg() const;
};

// One run per lambda with shared seed and eval set; rows in grid order.
// `jobs` > 1 runs independent lambdas on worker threads.
SweepTable lambda_sweep(const GeneratorModel& g, const PosteriorModel& p, const ProbeSet& probes,
                        std::span<const double> grid, const PkdConfig& base,
                        const MetricsOptions& opts, std::size_t jobs = 1);

}  // namespace pkd
