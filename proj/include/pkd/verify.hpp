#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pkd/theory_oracle.hpp"

namespace pkd {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string tolerance;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  void append(const VerifyReport& other);
  // One "PASS|FAIL name [tolerance] detail" line per check.
  std::string to_text() const;
};

using StepFunction = std::function<SparseStep(std::span<const double>, double, double)>;

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t lp_instances = 1000;
  std::size_t worlds = 100;
  std::size_t gradient_instances = 100;
  double fd_step = 1e-6;
  double fd_tolerance = 1e-4;
  // The step under test; replaced by a mutant in the self-test.
  StepFunction step = [](std::span<const double> v, double eps, double lambda) {
    return closed_form_step(v, eps, lambda);
  };
};

struct LpInstance {
  std::vector<double> v;  // ascent direction fed to the step (oracle sees -v)
  double epsilon = 0.0;
  double lambda = 0.0;
};

// Random instances; every one contains coordinates with |v_i| equal to
// lambda/2, lambda and 2 lambda besides uniform draws.
std::vector<LpInstance> random_lp_instances(std::size_t count, std::uint64_t seed);

CheckResult check_step_matches_oracle(const std::vector<LpInstance>& instances, const StepFunction& step);
CheckResult check_dual_certificates(const std::vector<LpInstance>& instances);
CheckResult check_active_count_monotone(const std::vector<LpInstance>& instances, const StepFunction& step);
CheckResult check_grid_separability(std::size_t count, std::uint64_t seed);

// Worlds with 2..50 atoms whose posteriors were calibrated to Z = 1.
std::vector<DiscreteWorld> random_calibrated_worlds(std::size_t count, std::uint64_t seed);
CheckResult check_optimal_discriminator(const std::vector<DiscreteWorld>& worlds);

struct GradientCheckStats {
  double max_relative_error = 0.0;
  std::size_t instances = 0;
  std::size_t components = 0;
};

// |a - b| / max(|a|, |b|, 1e-6): relative, with a floor for components that
// are zero up to finite-difference round-off.
double gradient_relative_error(double analytic, double numeric);

// Central differences of mean log(1 - P_l(G_theta(z))) wrt theta on random
// small generator/posterior pairs.
GradientCheckStats objective_gradient_check(std::size_t count, std::uint64_t seed, double h);
// Every graph primitive on `count` random parameterizations.
GradientCheckStats primitive_gradient_check(std::size_t count, std::uint64_t seed, double h);
// max |backward(2 g) - 2 backward(g)| over random graphs.
double backward_linearity_error(std::size_t count, std::uint64_t seed);

VerifyReport verify_theorems(const VerifyOptions& opts);
VerifyReport verify_gradients(const VerifyOptions& opts);
// suite: "theorems", "gradients" or "all"; anything else is a ConfigError.
VerifyReport run_verify(std::string_view suite, const VerifyOptions& opts);

}  // namespace pkd
