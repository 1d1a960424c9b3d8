#include "pkd/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "pkd/io.hpp"

namespace pkd {

NodeId Probe::build(Graph& graph, NodeId x) const {
  if (kind == Kind::kPosterior) return model.build(graph, x);
  NodeId w = graph.constant(Tensor(Shape{1, weights.size()}, weights), name + ".weight");
  NodeId b = graph.constant(Tensor(Shape{1}, {offset}), name + ".offset");
  return graph.affine(x, w, b, name);
}

void ProbeSet::add_posterior(std::string name, PosteriorModel model) {
  Probe p;
  p.name = std::move(name);
  p.kind = Probe::Kind::kPosterior;
  p.model = std::move(model);
  probes_.push_back(std::move(p));
}

void ProbeSet::add_coordinate(std::string name, std::size_t index, std::size_t dim) {
  if (index >= dim) throw ConfigError("coordinate probe '" + name + "': index out of range");
  std::vector<double> w(dim, 0.0);
  w[index] = 1.0;
  add_linear(std::move(name), std::move(w));
}

void ProbeSet::add_linear(std::string name, std::vector<double> weights, double offset) {
  Probe p;
  p.name = std::move(name);
  p.kind = Probe::Kind::kLinear;
  p.weights = std::move(weights);
  p.offset = offset;
  probes_.push_back(std::move(p));
}

ProbeSet ProbeSet::only(Probe::Kind kind) const {
  ProbeSet out;
  for (const auto& p : probes_) {
    if (p.kind == kind) out.probes_.push_back(p);
  }
  return out;
}

std::vector<double> probe_values(const GeneratorModel& g, const Probe& probe, const Tensor& z) {
  Graph graph;
  NodeId x = build_mlp(graph, g.net, graph.input("z"));
  probe.build(graph, x);
  return graph.forward({{"z", z}}, g.params).data();
}

MeanStat objective_estimate(const GeneratorModel& g, const PosteriorModel& p, const Tensor& z) {
  return mean_stat(evaluate_knowledge_objective(g, p, z, false).per_sample);
}

double delta_descent(const GeneratorModel& g, const ParamVector& theta_x, const ParamVector& theta_k,
                     const PosteriorModel& p, const Tensor& z) {
  const double before = objective_estimate(g.with_params(theta_x), p, z).mean;
  const double after = objective_estimate(g.with_params(theta_k), p, z).mean;
  return before - after;
}

double knowledge_fraction(const GeneratorModel& g, const ParamVector& theta, const PosteriorModel& p,
                          const Tensor& z, double threshold) {
  const auto probs = p.probability(generate(g.with_params(theta), z));
  const auto hits = std::count_if(probs.begin(), probs.end(), [&](double v) { return v > threshold; });
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

double RemainingShift::of(const std::string& name) const {
  for (const auto& [n, v] : per_probe) {
    if (n == name) return v;
  }
  throw ConfigError("no probe named '" + name + "'");
}

RemainingShift delta_remaining(const GeneratorModel& g, const ParamVector& theta_x,
                               const ParamVector& theta_k, const ProbeSet& probes, const Tensor& z) {
  const GeneratorModel gx = g.with_params(theta_x), gk = g.with_params(theta_k);
  RemainingShift out;
  for (const Probe& probe : probes.probes()) {
    const auto a = probe_values(gx, probe, z), b = probe_values(gk, probe, z);
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = std::abs(b[i] - a[i]);
    const double d = mean_stat(diff).mean;
    out.per_probe.emplace_back(probe.name, d);
    out.aggregate = std::max(out.aggregate, d);
  }
  return out;
}

double lipschitz_estimate(const GeneratorModel& g, const ParamVector& theta_x, const ProbeSet& probes,
                          double radius, std::size_t theta_samples, const Tensor& z,
                          std::uint64_t seed) {
  if (theta_samples < 1) throw ConfigError("lipschitz_estimate: need at least one parameter sample");
  if (z.rank() != 2 || z.rows() == 0) throw ShapeError("lipschitz_estimate: latent set must be [n>=1, k]");
  Rng rng = make_rng(seed, "lipschitz");
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  double best = 0.0;
  ParamVector theta = theta_x;
  for (std::size_t s = 0; s < theta_samples; ++s) {
    if (s > 0) {
      auto vals = theta.values();
      const auto base = theta_x.values();
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = base[i] + radius * unit(rng);
    }
    for (const Probe& probe : probes.probes()) {
      Graph graph;
      NodeId x = build_mlp(graph, g.net, graph.input("z"));
      graph.mean(probe.build(graph, x));
      for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto row = z.row_span(r);
        graph.forward({{"z", Tensor::row(std::vector<double>(row.begin(), row.end()))}}, theta);
        for (double v : graph.backward()) best = std::max(best, std::abs(v));
      }
    }
  }
  return best;
}

double ppr_value(double log_change, std::size_t d, double squared_distance) {
  if (!(squared_distance > 1e-18)) throw NumericError("ppr: no pixel change");
  if (d == 0) throw ConfigError("ppr: output dimension must be positive");
  return std::abs(log_change) / (squared_distance / static_cast<double>(d));
}

namespace {

std::vector<double> ppr_rows(const GeneratorModel& g, const ParamVector& theta_x, const ParamVector& theta,
                             const PosteriorModel& p, const Tensor& z) {
  const Tensor xa = generate(g.with_params(theta_x), z);
  const Tensor xb = generate(g.with_params(theta), z);
  const auto pa = p.probability(xa), pb = p.probability(xb);
  std::vector<double> out(xa.rows());
  for (std::size_t r = 0; r < xa.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < xa.cols(); ++c) {
      const double d = xb.at(r, c) - xa.at(r, c);
      sq += d * d;
    }
    out[r] = ppr_value(std::log(pb[r]) - std::log(pa[r]), xa.cols(), sq);
  }
  return out;
}

}  // namespace

double ppr(const GeneratorModel& g, const ParamVector& theta_x, const ParamVector& theta,
           const PosteriorModel& p, std::span<const double> z) {
  return ppr_rows(g, theta_x, theta, p, Tensor::row(std::vector<double>(z.begin(), z.end())))[0];
}

MeanStat ppr_stats(const GeneratorModel& g, const ParamVector& theta_x, const ParamVector& theta,
                   const PosteriorModel& p, const Tensor& z) {
  return mean_stat(ppr_rows(g, theta_x, theta, p, z));
}

double psr(const ExtrapolationTrace& trace, std::size_t n) {
  if (n == 0) throw ConfigError("psr: parameter count must be positive");
  if (trace.cumulative_mask.size() != n) throw ShapeError("psr: trace mask length differs from N");
  return static_cast<double>(trace.cumulative_active()) / static_cast<double>(n);
}

namespace {

double safe_ratio(double num, double den) {
  if (den > 0.0) return num / den;
  if (num == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return num > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

Tensor head_rows(const Tensor& z, std::size_t n) {
  n = std::min(n, z.rows());
  Tensor out(Shape{n, z.cols()});
  std::copy(z.values().begin(), z.values().begin() + static_cast<std::ptrdiff_t>(n * z.cols()),
            out.values().begin());
  return out;
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::vector<std::string> header = {"lambda", "epsilon", "steps", "status", "objective_before",
                                     "objective_before_sem", "objective_after", "objective_after_sem",
                                     "delta", "delta_remaining", "lipschitz", "ratio", "ratio_bound",
                                     "ppr_mean", "ppr_sd", "psr", "knowledge_before", "knowledge_after"};
  for (const auto& [name, v] : shifts.per_probe) header.push_back("shift_" + name);
  CsvWriter csv(header);
  csv.cell(lambda).cell(epsilon).cell(steps).cell(status).cell(objective_before);
  csv.cell(objective_before_sem).cell(objective_after).cell(objective_after_sem).cell(delta);
  csv.cell(delta_remaining).cell(lipschitz).cell(ratio).cell(ratio_bound).cell(ppr_mean);
  csv.cell(ppr_sd).cell(psr).cell(knowledge_before).cell(knowledge_after);
  for (const auto& [name, v] : shifts.per_probe) csv.cell(v);
  csv.end_row();
  return csv.str();
}

MetricsReport compute_report(const GeneratorModel& g, const ParamVector& theta_k,
                             const PosteriorModel& p, const ProbeSet& probes,
                             const ExtrapolationTrace& trace, const Tensor& eval_z,
                             const MetricsOptions& opts) {
  MetricsReport r;
  r.lambda = trace.lambda;
  r.epsilon = trace.epsilon;
  r.steps = trace.steps.size();
  r.status = trace.status;
  const MeanStat before = objective_estimate(g, p, eval_z);
  const MeanStat after = objective_estimate(g.with_params(theta_k), p, eval_z);
  r.objective_before = before.mean;
  r.objective_before_sem = before.sem;
  r.objective_after = after.mean;
  r.objective_after_sem = after.sem;
  r.delta = before.mean - after.mean;
  r.shifts = delta_remaining(g, g.params, theta_k, probes, eval_z);
  const ProbeSet classifiers = probes.only(Probe::Kind::kPosterior);
  for (const Probe& pr : classifiers.probes()) r.delta_remaining = std::max(r.delta_remaining, r.shifts.of(pr.name));
  if (!classifiers.empty()) {
    const double radius = static_cast<double>(std::max<std::size_t>(r.steps, 1)) * r.epsilon;
    r.lipschitz = lipschitz_estimate(g, g.params, classifiers, radius, opts.lipschitz_thetas,
                                     head_rows(eval_z, opts.lipschitz_latents), opts.seed);
  }
  r.ratio = safe_ratio(r.delta, r.delta_remaining);
  r.ratio_bound = safe_ratio(r.lambda, r.lipschitz);
  if (opts.compute_ppr) {
    try {
      const MeanStat s = ppr_stats(g, g.params, theta_k, p, eval_z);
      r.ppr_mean = s.mean;
      r.ppr_sd = s.stddev;
    } catch (const NumericError&) {
      // No output moved (e.g. an over-thresholded run): PPR is undefined.
    }
  }
  r.psr = psr(trace, g.params.size());
  r.knowledge_before = knowledge_fraction(g, g.params, p, eval_z);
  r.knowledge_after = knowledge_fraction(g, theta_k, p, eval_z);
  return r;
}

std::string SweepTable::to_csv() const {
  CsvWriter csv({"lambda", "delta", "delta_remaining", "ratio", "ratio_bound", "psr", "ppr_mean",
                 "ppr_sd", "active_total", "knowledge_after", "status"});
  for (const auto& r : rows) {
    csv.cell(r.lambda).cell(r.delta).cell(r.delta_remaining).cell(r.ratio).cell(r.ratio_bound);
    csv.cell(r.psr).cell(r.ppr_mean).cell(r.ppr_sd).cell(r.active_total).cell(r.knowledge_after);
    csv.cell(r.status);
    csv.end_row();
  }
  return "# lipschitz=" + format_double(lipschitz) + "\n" + csv.str();
}

std::string SweepTable::to_svg() const {
  // Different units share one axis, so each column is scaled by its maximum.
  auto series = [&](std::string label, auto get) {
    PlotSeries s;
    s.label = std::move(label);
    double mx = 0.0;
    for (const auto& r : rows) {
      const double v = get(r);
      if (std::isfinite(v)) mx = std::max(mx, std::abs(v));
    }
    for (const auto& r : rows) {
      const double v = get(r);
      if (std::isfinite(v) && r.lambda > 0.0) s.points.emplace_back(r.lambda, mx > 0.0 ? v / mx : 0.0);
    }
    return s;
  };
  std::vector<PlotSeries> all = {
      series("PSR", [](const SweepRow& r) { return r.psr; }),
      series("PPR", [](const SweepRow& r) { return r.ppr_mean; }),
      series("delta/delta_r", [](const SweepRow& r) { return r.ratio; }),
  };
  return render_svg({"lambda sweep", "lambda", "value / max over sweep", true}, all);
}

SweepTable lambda_sweep(const GeneratorModel& g, const PosteriorModel& p, const ProbeSet& probes,
                        std::span<const double> grid, const PkdConfig& base,
                        const MetricsOptions& opts, std::size_t jobs) {
  if (grid.empty()) throw ConfigError("lambda_sweep: empty lambda grid");
  base.validate(false);
  SweepTable table;
  table.rows.resize(grid.size());
  const Tensor eval_z = eval_latents(g, base);
  const ProbeSet classifiers = probes.only(Probe::Kind::kPosterior);
  if (!classifiers.empty()) {
    table.lipschitz = lipschitz_estimate(g, g.params, classifiers,
                                         static_cast<double>(base.steps) * base.epsilon,
                                         opts.lipschitz_thetas,
                                         head_rows(eval_z, opts.lipschitz_latents), opts.seed);
  }
  auto run_one = [&](std::size_t i) {
    PkdConfig cfg = base;
    cfg.lambda = grid[i];
    cfg.lambda0.reset();
    const PkdResult res = run_pkd(g, p, cfg);
    SweepRow& row = table.rows[i];
    row.lambda = grid[i];
    row.delta = delta_descent(g, g.params, res.theta, p, eval_z);
    const RemainingShift shift = delta_remaining(g, g.params, res.theta, classifiers, eval_z);
    row.delta_remaining = shift.aggregate;
    row.ratio = safe_ratio(row.delta, row.delta_remaining);
    row.ratio_bound = safe_ratio(row.lambda, table.lipschitz);
    row.psr = psr(res.trace, g.params.size());
    row.ppr_mean = row.ppr_sd = std::numeric_limits<double>::quiet_NaN();
    if (opts.compute_ppr) {
      try {
        const MeanStat s = ppr_stats(g, g.params, res.theta, p, eval_z);
        row.ppr_mean = s.mean;
        row.ppr_sd = s.stddev;
      } catch (const NumericError&) {
      }
    }
    for (const auto& st : res.trace.steps) row.active_total += st.active;
    row.knowledge_after = knowledge_fraction(g, res.theta, p, eval_z);
    row.status = res.trace.status;
  };

  jobs = std::max<std::size_t>(1, std::min(jobs, grid.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run_one(i);
    return table;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < grid.size(); i = next++) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
  return table;
}

}  // namespace pkd
