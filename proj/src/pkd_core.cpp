#include "pkd/pkd_core.hpp"

#include <algorithm>
#include <cmath>

#include "pkd/io.hpp"

namespace pkd {

void PkdConfig::validate(bool dirac) const {
  if (steps < 1) throw ConfigError("pkd: K must be at least 1");
  if (!(epsilon > 0.0)) throw ConfigError("pkd: epsilon must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("pkd: lambda must be non-negative");
  if (lambda0 && !(*lambda0 >= 0.0)) throw ConfigError("pkd: lambda0 must be non-negative");
  if (batch < 1) throw ConfigError("pkd: batch size m must be at least 1");
  if (eval_size < 1) throw ConfigError("pkd: eval_size must be at least 1");
  if (dirac && !(xi >= kMinXi)) {
    throw ConfigError("pkd: xi must be at least " + format_double(kMinXi) + " in Dirac mode");
  }
}

double resolve_lambda(const PkdConfig& cfg, double lipschitz) {
  return cfg.lambda0 ? *cfg.lambda0 * lipschitz : cfg.lambda;
}

std::size_t SparseStep::active_count() const {
  return static_cast<std::size_t>(std::count_if(signs.begin(), signs.end(), [](std::int8_t s) { return s != 0; }));
}

std::vector<double> SparseStep::delta() const {
  std::vector<double> d(signs.size());
  for (std::size_t i = 0; i < signs.size(); ++i) d[i] = epsilon * signs[i];
  return d;
}

void SparseStep::apply(std::span<double> theta) const {
  if (theta.size() != signs.size()) throw ShapeError("sparse step: length mismatch");
  for (std::size_t i = 0; i < signs.size(); ++i) {
    if (signs[i] > 0) {
      theta[i] += epsilon;
    } else if (signs[i] < 0) {
      theta[i] -= epsilon;
    }
  }
}

SparseStep closed_form_step(std::span<const double> v, double epsilon, double lambda) {
  SparseStep step;
  step.epsilon = epsilon;
  step.signs.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > lambda) step.signs[i] = v[i] > 0.0 ? 1 : -1;
  }
  return step;
}

std::vector<double> descent_direction(std::span<const double> objective_gradient) {
  std::vector<double> v(objective_gradient.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -objective_gradient[i];
  return v;
}

namespace {

struct ObjectiveGraph {
  Graph graph;
  NodeId probability = 0;
  NodeId per_sample = 0;
};

ObjectiveGraph build_objective(const GeneratorModel& g, const PosteriorModel& p) {
  ObjectiveGraph og;
  Graph& gr = og.graph;
  NodeId x = build_mlp(gr, g.net, gr.input("z"));
  og.probability = p.build(gr, x);
  NodeId complement = gr.clamp(gr.scale_shift(og.probability, -1.0, 1.0), kProbabilityFloor, 1.0);
  og.per_sample = gr.log(complement);
  gr.mean(og.per_sample);
  return og;
}

void check_gradient(const std::vector<double>& grad, const ParamVector& layout) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NumericError("knowledge gradient: non-finite component " + std::to_string(i) +
                         " in segment '" + layout.segment_of(i) + "'");
    }
  }
}

}  // namespace

KnowledgeObjective evaluate_knowledge_objective(const GeneratorModel& g, const PosteriorModel& p,
                                                const Tensor& z, bool with_gradient) {
  if (z.rank() != 2 || z.cols() != g.latent_dim() || z.rows() == 0) {
    throw ShapeError("knowledge objective: latent batch must be [m>=1, " +
                     std::to_string(g.latent_dim()) + "], got " + shape_string(z.shape()));
  }
  if (p.net.input_dim() != g.output_dim()) {
    throw ShapeError("knowledge objective: posterior input dimension does not match generator output");
  }
  ObjectiveGraph og = build_objective(g, p);
  KnowledgeObjective out;
  out.value = og.graph.forward({{"z", z}}, g.params).item();
  out.probabilities = og.graph.value(og.probability).data();
  out.per_sample = og.graph.value(og.per_sample).data();
  if (with_gradient) {
    out.gradient = og.graph.backward();
    check_gradient(out.gradient, g.params);
  }
  return out;
}

std::vector<double> knowledge_gradient(const GeneratorModel& g, const PosteriorModel& p,
                                       const Tensor& z) {
  return evaluate_knowledge_objective(g, p, z, true).gradient;
}

std::size_t ExtrapolationTrace::cumulative_active() const {
  return static_cast<std::size_t>(std::count(cumulative_mask.begin(), cumulative_mask.end(), 1));
}

std::string ExtrapolationTrace::to_csv() const {
  CsvWriter csv({"step", "objective", "objective_sem", "active", "cumulative_active",
                 "batch_objective_before", "batch_objective_after", "predicted_descent",
                 "gradient_inf_norm", "checkpoint_hash", "status"});
  csv.cell(0).cell(initial_objective).cell(initial_objective_sem).cell(0).cell(0);
  csv.cell("").cell("").cell("").cell("").cell(initial_hash).cell(status);
  csv.end_row();
  for (const auto& r : steps) {
    csv.cell(r.step).cell(r.objective).cell(r.objective_sem).cell(r.active).cell(r.cumulative_active);
    csv.cell(r.batch_objective_before).cell(r.batch_objective_after).cell(r.predicted_descent);
    csv.cell(r.gradient_inf_norm).cell(r.checkpoint_hash).cell(status);
    csv.end_row();
  }
  return csv.str();
}

Tensor eval_latents(const GeneratorModel& g, const PkdConfig& cfg) {
  Rng rng = make_rng(cfg.seed, "eval");
  return g.prior.sample(cfg.eval_size, g.latent_dim(), rng);
}

namespace {

MeanStat eval_objective(const GeneratorModel& g, const PosteriorModel& p, const Tensor& z) {
  const auto obj = evaluate_knowledge_objective(g, p, z, false);
  return mean_stat(obj.per_sample);
}

PkdResult run_loop(const GeneratorModel& g, const PosteriorModel& p, const PkdConfig& cfg) {
  Rng batch_rng = make_rng(cfg.seed, "pkd");
  const Tensor eval_z = eval_latents(g, cfg);

  PkdResult result;
  ExtrapolationTrace& trace = result.trace;
  trace.lambda = cfg.lambda;
  trace.epsilon = cfg.epsilon;
  trace.fixed_batch = cfg.fixed_batch;
  trace.cumulative_mask.assign(g.params.size(), 0);
  trace.initial_hash = g.params.hash_hex();
  const MeanStat initial = eval_objective(g, p, eval_z);
  trace.initial_objective = initial.mean;
  trace.initial_objective_sem = initial.sem;

  GeneratorModel current = g;
  Tensor fixed_z;
  if (cfg.fixed_batch) fixed_z = g.prior.sample(cfg.batch, g.latent_dim(), batch_rng);

  for (std::size_t k = 1; k <= cfg.steps; ++k) {
    const Tensor z = cfg.fixed_batch ? fixed_z : g.prior.sample(cfg.batch, g.latent_dim(), batch_rng);
    const KnowledgeObjective before = evaluate_knowledge_objective(current, p, z, true);
    const bool saturated = std::all_of(before.probabilities.begin(), before.probabilities.end(),
                                       [](double v) { return v >= kProbabilityCeil; });
    if (saturated) {
      trace.status = "saturated";
      break;
    }
    const std::vector<double> v = descent_direction(before.gradient);
    const SparseStep step = closed_form_step(v, cfg.epsilon, cfg.lambda);

    StepRecord rec;
    rec.step = k;
    rec.active = step.active_count();
    rec.batch_objective_before = before.value;
    CompensatedSum predicted;
    double inf_norm = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      inf_norm = std::max(inf_norm, std::abs(v[i]));
      if (step.active(i)) {
        predicted.add(std::abs(v[i]) * cfg.epsilon);
        trace.cumulative_mask[i] = 1;
      }
    }
    rec.predicted_descent = predicted.value();
    rec.gradient_inf_norm = inf_norm;
    rec.cumulative_active = trace.cumulative_active();

    step.apply(current.params.values());
    rec.batch_objective_after = evaluate_knowledge_objective(current, p, z, false).value;
    const MeanStat obj = eval_objective(current, p, eval_z);
    rec.objective = obj.mean;
    rec.objective_sem = obj.sem;
    rec.checkpoint_hash = current.params.hash_hex();
    if (cfg.record_gradients) {
      rec.gradient = v;
      rec.signs = step.signs;
    }
    trace.steps.push_back(std::move(rec));
  }
  result.theta = std::move(current.params);
  return result;
}

}  // namespace

PkdResult run_pkd(const GeneratorModel& g, const PosteriorModel& p, const PkdConfig& cfg) {
  cfg.validate(false);
  return run_loop(g, p, cfg);
}

PkdResult run_dirac_at(const GeneratorModel& g, const PosteriorModel& p, std::span<const double> z0,
                       const PkdConfig& cfg) {
  cfg.validate(true);
  GeneratorModel local = g;
  local.prior = PriorSpec::gaussian(std::vector<double>(z0.begin(), z0.end()), cfg.xi);
  return run_loop(local, p, cfg);
}

DiracResult run_dirac(const GeneratorModel& g, const PosteriorModel& p, std::span<const double> x0,
                      const PkdConfig& cfg, const InversionConfig& inversion) {
  cfg.validate(true);
  const InversionResult inv = invert_latent(g, x0, inversion);
  DiracResult out;
  out.z0 = inv.z;
  out.reconstruction_error = inv.error;
  out.run = run_dirac_at(g, p, inv.z, cfg);
  return out;
}

double lambda_max_estimate(const GeneratorModel& g, const PosteriorModel& p, const PriorSpec& prior,
                           std::size_t batches, std::size_t m, std::uint64_t seed) {
  if (batches < 1) throw ConfigError("lambda_max_estimate: batches must be at least 1");
  if (m < 1) throw ConfigError("lambda_max_estimate: batch size must be at least 1");
  Rng rng = make_rng(seed, "lambda-max");
  double out = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    const Tensor z = prior.sample(m, g.latent_dim(), rng);
    for (double v : knowledge_gradient(g, p, z)) out = std::max(out, std::abs(v));
  }
  return out;
}

double run_lambda_max(const GeneratorModel& g, const PosteriorModel& p, const PkdConfig& cfg) {
  Rng batch_rng = make_rng(cfg.seed, "pkd");
  const std::size_t batches = cfg.fixed_batch ? 1 : cfg.steps;
  double out = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    const Tensor z = g.prior.sample(cfg.batch, g.latent_dim(), batch_rng);
    for (double v : knowledge_gradient(g, p, z)) out = std::max(out, std::abs(v));
  }
  return out;
}

}  // namespace pkd
