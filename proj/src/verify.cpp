#include "pkd/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "pkd/io.hpp"
#include "pkd/numeric.hpp"

namespace pkd {

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

void VerifyReport::append(const VerifyReport& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
}

std::string VerifyReport::to_text() const {
  std::ostringstream out;
  for (const auto& c : checks) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << " [" << c.tolerance << "] " << c.detail;
    char buf[32];
    std::snprintf(buf, sizeof buf, " (%.2fs)", c.seconds);
    out << buf << "\n";
  }
  return out.str();
}

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
CheckResult timed(F&& body) {
  const auto t0 = Clock::now();
  CheckResult r = body();
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

double log_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

}  // namespace

std::vector<LpInstance> random_lp_instances(std::size_t count, std::uint64_t seed) {
  Rng rng = make_rng(seed, "lp-instances");
  std::uniform_int_distribution<int> size(6, 64);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<LpInstance> out(count);
  for (auto& inst : out) {
    inst.lambda = log_uniform(rng, 1e-4, 1.0);
    inst.epsilon = log_uniform(rng, 1e-5, 1e-1);
    const int n = size(rng);
    inst.v.resize(static_cast<std::size_t>(n));
    const double l = inst.lambda;
    const double exact[] = {0.5 * l, l, 2.0 * l, -0.5 * l, -l, -2.0 * l};
    for (int i = 0; i < n; ++i) {
      inst.v[static_cast<std::size_t>(i)] = i < 6 ? exact[i] : 3.0 * l * unit(rng);
    }
    std::shuffle(inst.v.begin(), inst.v.end(), rng);
  }
  return out;
}

CheckResult check_step_matches_oracle(const std::vector<LpInstance>& instances, const StepFunction& step) {
  return timed([&] {
    CheckResult r{"closed-form step equals LP oracle", true, "coordinate-exact", "", 0.0};
    std::size_t coords = 0, mismatches = 0;
    for (const auto& inst : instances) {
      const SparseStep s = step(inst.v, inst.epsilon, inst.lambda);
      std::vector<double> neg(inst.v.size());
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -inst.v[i];
      const auto x = lp_oracle(neg, inst.epsilon, inst.lambda);
      const auto d = s.delta();
      for (std::size_t i = 0; i < x.size(); ++i, ++coords) {
        if (d[i] != x[i] || std::abs(d[i]) > inst.epsilon) ++mismatches;
      }
    }
    r.passed = mismatches == 0;
    r.detail = std::to_string(instances.size()) + " instances, " + std::to_string(coords) +
               " coordinates, " + std::to_string(mismatches) + " mismatches";
    return r;
  });
}

CheckResult check_dual_certificates(const std::vector<LpInstance>& instances) {
  return timed([&] {
    CheckResult r{"dual certificates (feasibility, slackness, gap)", true,
                  "1e-12 absolute", "", 0.0};
    double worst_gap = 0.0, worst_slack = 0.0, worst_excess = 0.0;
    std::size_t failures = 0;
    std::string first;
    for (const auto& inst : instances) {
      std::vector<double> neg(inst.v.size());
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -inst.v[i];
      try {
        const DualCertificate c = dual_solution(neg, inst.epsilon, inst.lambda);
        worst_gap = std::max(worst_gap, std::abs(c.gap()));
        worst_slack = std::max(worst_slack, c.slackness);
        worst_excess = std::max(worst_excess, c.feasibility - inst.lambda);
      } catch (const CheckFailure& e) {
        if (failures++ == 0) first = e.what();
      }
    }
    r.passed = failures == 0;
    r.detail = "max gap " + format_double(worst_gap) + ", max slackness " + format_double(worst_slack) +
               ", max feasibility excess " + format_double(worst_excess);
    if (!first.empty()) r.detail += "; first failure: " + first;
    return r;
  });
}

CheckResult check_active_count_monotone(const std::vector<LpInstance>& instances, const StepFunction& step) {
  return timed([&] {
    CheckResult r{"active count non-increasing in lambda", true, "exact", "", 0.0};
    std::size_t violations = 0;
    for (const auto& inst : instances) {
      std::size_t prev = inst.v.size() + 1;
      for (double scale : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
        const std::size_t m = step(inst.v, inst.epsilon, inst.lambda * scale).active_count();
        if (m > prev) ++violations;
        prev = m;
      }
    }
    r.passed = violations == 0;
    r.detail = std::to_string(violations) + " violations over " + std::to_string(instances.size()) + " instances";
    return r;
  });
}

CheckResult check_grid_separability(std::size_t count, std::uint64_t seed) {
  return timed([&] {
    CheckResult r{"LP oracle agrees with joint grid search (N <= 3)", true,
                  "objective within 1e-15, same argmin", "", 0.0};
    Rng rng = make_rng(seed, "lp-grid");
    std::uniform_int_distribution<int> size(1, 3);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::size_t failures = 0;
    for (std::size_t t = 0; t < count; ++t) {
      const double lambda = log_uniform(rng, 1e-3, 1.0), eps = log_uniform(rng, 1e-4, 1e-1);
      std::vector<double> v(static_cast<std::size_t>(size(rng)));
      for (double& x : v) x = 3.0 * lambda * unit(rng);
      const auto x = lp_oracle(v, eps, lambda);
      const GridSolution g = lp_grid_oracle(v, eps, lambda, t < 4 ? 100 : 10);
      const double fo = lp_objective(v, x, lambda);
      if (std::abs(fo - g.value) > 1e-15 || g.x != x) ++failures;
    }
    r.passed = failures == 0;
    r.detail = std::to_string(failures) + " disagreements over " + std::to_string(count) + " instances";
    return r;
  });
}

std::vector<DiscreteWorld> random_calibrated_worlds(std::size_t count, std::uint64_t seed) {
  Rng rng = make_rng(seed, "worlds");
  std::uniform_int_distribution<int> atoms(2, 50);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> post(0.02, 0.98);
  std::vector<DiscreteWorld> out;
  for (std::size_t t = 0; t < count; ++t) {
    DiscreteWorld w;
    const auto n = static_cast<std::size_t>(atoms(rng));
    std::vector<double> raw(n);
    for (double& v : raw) v = expo(rng) + 1e-3;
    const double s = compensated_sum(raw);
    for (std::size_t i = 0; i < n; ++i) {
      w.atoms.push_back("a" + std::to_string(i));
      w.p_x.push_back(raw[i] / s);
      w.p_l.push_back(post(rng));
    }
    w.p_g = w.p_x;
    out.push_back(calibrate(std::move(w)));
  }
  return out;
}

CheckResult check_optimal_discriminator(const std::vector<DiscreteWorld>& worlds) {
  return timed([&] {
    CheckResult r{"optimal discriminator equals posterior on calibrated worlds", true,
                  "|D* - P_l|_inf <= 1e-9, bisection agreement <= 1e-9, |Z - 1| <= 1e-12", "", 0.0};
    double worst_post = 0.0, worst_bisect = 0.0, worst_z = 0.0;
    for (const auto& w : worlds) {
      const auto d = optimal_discriminator(w);
      worst_z = std::max(worst_z, std::abs(w.z - 1.0));
      for (std::size_t i = 0; i < d.size(); ++i) {
        worst_post = std::max(worst_post, std::abs(d[i] - w.p_l[i]));
        worst_bisect = std::max(worst_bisect, std::abs(d[i] - bisect_discriminator(w.p_h[i], w.p_g[i])));
      }
    }
    r.passed = worst_post <= 1e-9 && worst_bisect <= 1e-9 && worst_z <= 1e-12;
    r.detail = std::to_string(worlds.size()) + " worlds, max |D*-P_l| " + format_double(worst_post) +
               ", max |D*-bisection| " + format_double(worst_bisect) + ", max |Z-1| " + format_double(worst_z);
    return r;
  });
}

double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

namespace {

// Central difference of f at every coordinate of params.
template <class F>
std::vector<double> central_difference(ParamVector params, double h, F&& f) {
  auto vals = params.values();
  std::vector<double> out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + h;
    const double up = f(params);
    vals[i] = keep - h;
    const double down = f(params);
    vals[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

void fold(GradientCheckStats& s, std::span<const double> analytic, std::span<const double> numeric) {
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    s.max_relative_error = std::max(s.max_relative_error, gradient_relative_error(analytic[i], numeric[i]));
  }
  s.components += analytic.size();
  ++s.instances;
}

}  // namespace

GradientCheckStats objective_gradient_check(std::size_t count, std::uint64_t seed, double h) {
  Rng rng = make_rng(seed, "fd-objective");
  std::uniform_int_distribution<int> dim(1, 4), width(2, 6), layers(1, 2), coin(0, 1), batch(1, 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  GradientCheckStats stats;
  for (std::size_t t = 0; t < count; ++t) {
    const auto k = static_cast<std::size_t>(dim(rng)), d = static_cast<std::size_t>(dim(rng));
    std::vector<std::size_t> hidden(static_cast<std::size_t>(layers(rng)));
    for (auto& w : hidden) w = static_cast<std::size_t>(width(rng));
    GeneratorModel g = GeneratorModel::create(k, hidden, d, coin(rng) ? Activation::kTanh : Activation::kSigmoid);
    init_mlp_params(g.net, g.params, rng, 1.0);
    for (double& b : g.params.values()) b += 0.1 * normal(rng);
    std::vector<std::size_t> post_hidden;
    if (coin(rng)) post_hidden.push_back(static_cast<std::size_t>(width(rng)));
    PosteriorModel p = PosteriorModel::create(d, post_hidden, "probe");
    init_mlp_params(p.net, p.params, rng, 1.0);
    Tensor z(Shape{static_cast<std::size_t>(batch(rng)), k});
    for (double& v : z.values()) v = normal(rng);

    const auto analytic = knowledge_gradient(g, p, z);
    const auto numeric = central_difference(g.params, h, [&](const ParamVector& th) {
      return evaluate_knowledge_objective(g.with_params(th), p, z, false).value;
    });
    fold(stats, analytic, numeric);
  }
  return stats;
}

GradientCheckStats primitive_gradient_check(std::size_t count, std::uint64_t seed, double h) {
  Rng rng = make_rng(seed, "fd-primitives");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> positive(0.5, 2.0);
  GradientCheckStats stats;
  const std::vector<std::string> ops = {"affine", "tanh", "sigmoid", "log", "add", "sub",
                                        "mul", "scale_shift", "mean", "clamp"};
  for (const auto& op : ops) {
    for (std::size_t t = 0; t < count; ++t) {
      ParamVector params;
      params.add_segment("a", Shape{3, 4});
      params.add_segment("b", Shape{3, 4});
      params.add_segment("w", Shape{2, 4});
      params.add_segment("c", Shape{2});
      for (double& v : params.values()) v = op == "log" ? positive(rng) : normal(rng);
      if (op == "clamp") {
        // Keep entries away from the kinks at +-0.5.
        for (double& v : params.segment_values("a")) {
          if (std::abs(std::abs(v) - 0.5) < 1e-3) v += 0.01;
        }
      }
      Graph graph;
      NodeId a = graph.parameter("a"), b = graph.parameter("b");
      NodeId out = 0;
      if (op == "affine") out = graph.affine(a, graph.parameter("w"), graph.parameter("c"));
      if (op == "tanh") out = graph.tanh(a);
      if (op == "sigmoid") out = graph.sigmoid(a);
      if (op == "log") out = graph.log(a);
      if (op == "add") out = graph.add(a, b);
      if (op == "sub") out = graph.sub(a, b);
      if (op == "mul") out = graph.mul(a, b);
      if (op == "scale_shift") out = graph.scale_shift(a, -1.7, 0.3);
      if (op == "mean") out = a;
      if (op == "clamp") out = graph.clamp(a, -0.5, 0.5);
      // Weight the outputs so every entry's gradient differs.
      Tensor weights(graph.forward({}, params).shape());
      for (double& v : weights.values()) v = normal(rng);
      NodeId weighted = graph.mul(out, graph.constant(weights, "weights"));
      graph.mean(weighted);
      graph.forward({}, params);
      const auto analytic = graph.backward();
      const auto numeric = central_difference(params, h, [&](const ParamVector& th) {
        return graph.forward({}, th).item();
      });
      fold(stats, analytic, numeric);
    }
  }
  return stats;
}

double backward_linearity_error(std::size_t count, std::uint64_t seed) {
  Rng rng = make_rng(seed, "linearity");
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    GeneratorModel g = GeneratorModel::create(3, {5}, 4, t % 2 ? Activation::kTanh : Activation::kSigmoid);
    init_mlp_params(g.net, g.params, rng, 1.0);
    Graph graph;
    build_mlp(graph, g.net, graph.input("z"));
    Tensor z(Shape{4, 3});
    for (double& v : z.values()) v = normal(rng);
    const Tensor& out = graph.forward({{"z", z}}, g.params);
    Tensor seed1(out.shape()), seed2(out.shape());
    for (std::size_t i = 0; i < seed1.size(); ++i) {
      seed1[i] = normal(rng);
      seed2[i] = 2.0 * seed1[i];
    }
    const auto g1 = graph.backward(seed1);
    const auto g2 = graph.backward(seed2);
    for (std::size_t i = 0; i < g1.size(); ++i) worst = std::max(worst, std::abs(g2[i] - 2.0 * g1[i]));
  }
  return worst;
}

VerifyReport verify_theorems(const VerifyOptions& opts) {
  VerifyReport report;
  const auto instances = random_lp_instances(opts.lp_instances, opts.seed);
  report.checks.push_back(check_step_matches_oracle(instances, opts.step));
  report.checks.push_back(check_dual_certificates(instances));
  report.checks.push_back(check_active_count_monotone(instances, opts.step));
  report.checks.push_back(check_grid_separability(40, opts.seed));
  report.checks.push_back(check_optimal_discriminator(random_calibrated_worlds(opts.worlds, opts.seed)));
  return report;
}

VerifyReport verify_gradients(const VerifyOptions& opts) {
  VerifyReport report;
  const std::string tol = "relative error < " + format_double(opts.fd_tolerance) + ", h = " +
                          format_double(opts.fd_step);
  report.checks.push_back(timed([&] {
    const auto s = objective_gradient_check(opts.gradient_instances, opts.seed, opts.fd_step);
    return CheckResult{"objective gradient vs central differences", s.max_relative_error < opts.fd_tolerance,
                       tol,
                       std::to_string(s.instances) + " models, " + std::to_string(s.components) +
                           " components, max relative error " + format_double(s.max_relative_error),
                       0.0};
  }));
  report.checks.push_back(timed([&] {
    const auto s = primitive_gradient_check(opts.gradient_instances, opts.seed, opts.fd_step);
    return CheckResult{"primitive gradients vs central differences", s.max_relative_error < opts.fd_tolerance,
                       tol,
                       std::to_string(s.instances) + " graphs, max relative error " +
                           format_double(s.max_relative_error),
                       0.0};
  }));
  report.checks.push_back(timed([&] {
    const double e = backward_linearity_error(opts.gradient_instances, opts.seed);
    return CheckResult{"backward is linear in the seed", e <= 1e-12, "1e-12 absolute",
                       "max |backward(2g) - 2 backward(g)| = " + format_double(e), 0.0};
  }));
  return report;
}

VerifyReport run_verify(std::string_view suite, const VerifyOptions& opts) {
  if (suite == "theorems") return verify_theorems(opts);
  if (suite == "gradients") return verify_gradients(opts);
  if (suite == "all") {
    VerifyReport r = verify_theorems(opts);
    r.append(verify_gradients(opts));
    return r;
  }
  throw ConfigError("unknown verify suite '" + std::string(suite) + "' (expected theorems, gradients or all)");
}

}  // namespace pkd
