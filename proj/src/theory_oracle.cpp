#include "pkd/theory_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pkd/io.hpp"
#include "pkd/numeric.hpp"

namespace pkd {

namespace {

void check_distribution(const std::vector<double>& p, const char* name) {
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("discrete world: ") + name + " has a negative or non-finite entry");
    }
  }
  const double s = compensated_sum(p);
  if (std::abs(s - 1.0) > kProbabilityTolerance) {
    throw ConfigError(std::string("discrete world: ") + name + " sums to " + format_double(s) +
                      ", expected 1");
  }
}

}  // namespace

void DiscreteWorld::validate() const {
  const std::size_t n = p_x.size();
  if (n == 0) throw ConfigError("discrete world: no atoms");
  if (p_l.size() != n || p_g.size() != n || (!atoms.empty() && atoms.size() != n)) {
    throw ConfigError("discrete world: p_x, p_l, p_g and atoms must have equal length");
  }
  check_distribution(p_x, "p_x");
  check_distribution(p_g, "p_g");
  for (double v : p_l) {
    if (!(v > 0.0 && v < 1.0)) throw ConfigError("discrete world: p_l must lie strictly inside (0,1)");
  }
  if (has_hypothetical()) {
    if (p_h.size() != n) throw ConfigError("discrete world: p_h has the wrong length");
    check_distribution(p_h, "p_h");
  }
}

DiscreteWorld DiscreteWorld::from_config(const KeyValueConfig& cfg) {
  DiscreteWorld w;
  w.p_x = cfg.get_doubles("p_x");
  w.p_l = cfg.get_doubles("p_l");
  w.p_g = cfg.has("p_g") ? cfg.get_doubles("p_g") : w.p_x;
  if (cfg.has("atoms")) {
    w.atoms = cfg.get_strings("atoms");
  } else {
    for (std::size_t i = 0; i < w.p_x.size(); ++i) w.atoms.push_back("a" + std::to_string(i));
  }
  w.validate();
  return w;
}

DiscreteWorld DiscreteWorld::load(const std::filesystem::path& path) {
  return from_config(KeyValueConfig::load(path));
}

DiscreteWorld build_hypothetical(DiscreteWorld w) {
  w.p_h.clear();
  w.validate();
  std::vector<double> unnorm(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w.p_l[i] >= 1.0 - 1e-12) {
      throw NumericError("build_hypothetical: p_l at atom " + std::to_string(i) +
                         " is too close to 1; the likelihood ratio diverges");
    }
    unnorm[i] = w.p_g[i] * w.p_l[i] / (1.0 - w.p_l[i]);
  }
  w.z = compensated_sum(unnorm);
  w.p_h.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) w.p_h[i] = unnorm[i] / w.z;
  return w;
}

DiscreteWorld calibrate(DiscreteWorld w) {
  const double log_z = std::log(build_hypothetical(w).z);
  for (double& p : w.p_l) p = sigmoid(logit(p) - log_z);
  return build_hypothetical(std::move(w));
}

std::vector<double> optimal_discriminator(const DiscreteWorld& w) {
  if (!w.has_hypothetical()) throw ConfigError("optimal_discriminator: world has no p_h");
  std::vector<double> d(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) d[i] = w.p_h[i] / (w.p_h[i] + w.p_g[i]);
  return d;
}

double bisect_discriminator(double a, double b, double resolution) {
  if (!(a > 0.0) || !(b > 0.0)) throw NumericError("bisect_discriminator: weights must be positive");
  // f'(d) = a/d - b/(1-d) is strictly decreasing on (0,1).
  double lo = 0.0, hi = 1.0;
  while (hi - lo > resolution) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (a * (1.0 - mid) - b * mid > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<double> lp_oracle(std::span<const double> v, double epsilon, double lambda) {
  std::vector<double> x(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    // Objective at x = -eps, 0, +eps, with the common factor eps pulled out so
    // that the comparisons against 0 keep the sign of lambda -/+ V exactly.
    const double at_minus = epsilon * (lambda - v[i]);
    const double at_plus = epsilon * (lambda + v[i]);
    double best = 0.0;
    if (at_minus < best) {
      best = at_minus;
      x[i] = -epsilon;
    }
    if (at_plus < best) x[i] = epsilon;
  }
  return x;
}

double lp_objective(std::span<const double> v, std::span<const double> x, double lambda) {
  if (v.size() != x.size()) throw ShapeError("lp_objective: length mismatch");
  CompensatedSum s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s.add(v[i] * x[i]);
    s.add(lambda * std::abs(x[i]));
  }
  return s.value();
}

GridSolution lp_grid_oracle(std::span<const double> v, double epsilon, double lambda, int resolution) {
  const std::size_t n = v.size();
  if (n == 0 || n > 3) throw ConfigError("lp_grid_oracle: supports 1 to 3 coordinates");
  if (resolution < 1) throw ConfigError("lp_grid_oracle: resolution must be positive");
  const int per_dim = 2 * resolution + 1;
  auto grid_value = [&](int j) {
    return epsilon * (static_cast<double>(j - resolution) / static_cast<double>(resolution));
  };
  GridSolution best;
  best.value = std::numeric_limits<double>::infinity();
  std::vector<int> idx(n, 0);
  std::vector<double> x(n);
  while (true) {
    for (std::size_t d = 0; d < n; ++d) x[d] = grid_value(idx[d]);
    const double f = lp_objective(v, x, lambda);
    // Strict improvement only, and prefer points with smaller |x|_1 on ties.
    double l1 = 0.0, best_l1 = 0.0;
    for (std::size_t d = 0; d < n; ++d) l1 += std::abs(x[d]);
    for (double b : best.x) best_l1 += std::abs(b);
    if (f < best.value || (f == best.value && l1 < best_l1)) {
      best.value = f;
      best.x = x;
    }
    std::size_t d = 0;
    while (d < n && ++idx[d] == per_dim) idx[d++] = 0;
    if (d == n) break;
  }
  return best;
}

DualCertificate dual_solution(std::span<const double> v, double epsilon, double lambda) {
  if (!(epsilon > 0.0) || !(lambda >= 0.0)) {
    throw ConfigError("dual_solution: need epsilon > 0 and lambda >= 0");
  }
  const std::size_t n = v.size();
  DualCertificate c;
  c.beta.assign(n, 0.0);
  c.gamma.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) throw NumericError("dual_solution: V is not finite");
    if (v[i] >= lambda) {
      c.gamma[i] = v[i] - lambda;
    } else if (v[i] <= -lambda) {
      c.beta[i] = -lambda - v[i];
    }
  }
  c.primal_x = lp_oracle(v, epsilon, lambda);
  c.primal = lp_objective(v, c.primal_x, lambda);
  CompensatedSum dual;
  for (std::size_t i = 0; i < n; ++i) dual.add(c.beta[i] + c.gamma[i]);
  c.dual = -epsilon * dual.value();

  for (std::size_t i = 0; i < n; ++i) {
    if (c.beta[i] < 0.0 || c.gamma[i] < 0.0) {
      throw CheckFailure("dual certificate: negative multiplier at coordinate " + std::to_string(i));
    }
    c.feasibility = std::max(c.feasibility, std::abs(v[i] + c.beta[i] - c.gamma[i]));
    const double x = c.primal_x[i];
    c.slackness = std::max({c.slackness, std::abs(c.beta[i] * (x - epsilon)),
                            std::abs(c.gamma[i] * (-epsilon - x))});
  }
  if (c.feasibility > lambda + kCertificateTolerance) {
    throw CheckFailure("dual certificate: dual feasibility violated, |V + beta - gamma|_inf = " +
                       format_double(c.feasibility) + " > lambda = " + format_double(lambda));
  }
  if (c.slackness > kCertificateTolerance) {
    throw CheckFailure("dual certificate: complementary slackness violated, residual " +
                       format_double(c.slackness));
  }
  if (std::abs(c.gap()) > kCertificateTolerance) {
    throw CheckFailure("dual certificate: duality gap " + format_double(c.gap()) + " exceeds " +
                       format_double(kCertificateTolerance));
  }
  return c;
}

std::string certificate_csv(std::span<const double> v, const DualCertificate& cert) {
  CsvWriter csv({"i", "v", "x", "beta", "gamma"});
  for (std::size_t i = 0; i < v.size(); ++i) {
    csv.cell(i).cell(v[i]).cell(cert.primal_x[i]).cell(cert.beta[i]).cell(cert.gamma[i]);
    csv.end_row();
  }
  return "# primal=" + format_double(cert.primal) + " dual=" + format_double(cert.dual) +
         " feasibility=" + format_double(cert.feasibility) + " slackness=" +
         format_double(cert.slackness) + "\n" + csv.str();
}

bool StepAccountingReport::all_bounds_hold() const {
  return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.bound_holds; });
}

bool StepAccountingReport::all_realized_ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.realized_ok; });
}

std::size_t StepAccountingReport::flagged() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.flagged; }));
}

std::string StepAccountingReport::to_csv() const {
  CsvWriter csv({"step", "active", "predicted", "bound", "realized", "bound_holds", "realized_ok",
                 "flagged"});
  for (const auto& r : rows) {
    csv.cell(r.step).cell(r.active).cell(r.predicted).cell(r.bound).cell(r.realized);
    csv.cell(r.bound_holds ? 1 : 0).cell(r.realized_ok ? 1 : 0).cell(r.flagged ? 1 : 0);
    csv.end_row();
  }
  return csv.str();
}

StepAccountingReport verify_step_accounting(const ExtrapolationTrace& trace, double lambda,
                                            double epsilon, double curvature,
                                            double realized_fraction) {
  if (!trace.fixed_batch) {
    throw ConfigError("verify_step_accounting: trace was not produced in fixed-batch mode");
  }
  StepAccountingReport report;
  for (const StepRecord& rec : trace.steps) {
    if (rec.gradient.empty() || rec.signs.size() != rec.gradient.size()) {
      throw ConfigError("verify_step_accounting: step " + std::to_string(rec.step) +
                        " has no recorded gradient");
    }
    const SparseStep expect = closed_form_step(rec.gradient, epsilon, lambda);
    if (expect.signs != rec.signs) {
      throw CheckFailure("verify_step_accounting: step " + std::to_string(rec.step) +
                         " signs differ from the closed-form step of its gradient");
    }
    StepAccountingRow row;
    row.step = rec.step;
    CompensatedSum predicted;
    row.bound_holds = true;
    for (std::size_t i = 0; i < rec.gradient.size(); ++i) {
      if (rec.signs[i] == 0) continue;
      ++row.active;
      const double mag = std::abs(rec.gradient[i]);
      // Term-wise |v_i| > lambda implies the summed inequality exactly.
      if (!(mag > lambda)) row.bound_holds = false;
      predicted.add(mag * epsilon);
    }
    row.predicted = predicted.value();
    row.bound = static_cast<double>(row.active) * lambda * epsilon;
    row.realized = rec.batch_objective_before - rec.batch_objective_after;
    row.realized_ok = row.realized >= realized_fraction * row.predicted;
    row.flagged = std::abs(row.realized - row.predicted) > curvature * epsilon * epsilon;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace pkd
