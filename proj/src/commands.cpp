#include "pkd/commands.hpp"

#include <algorithm>
#include <chrono>
#include <utility>

#include "pkd/error.hpp"
#include "pkd/io.hpp"
#include "pkd/verify.hpp"

namespace pkd {

namespace {

using Manifest = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const std::filesystem::path& path, const Manifest& entries) {
  std::string text;
  for (const auto& [k, v] : entries) text += k + " = " + v + "\n";
  write_file_atomic(path, text);
}

Manifest manifest_header(const ExperimentConfig& cfg, const std::string& command) {
  return {{"command", command},
          {"config", cfg.raw.source()},
          {"config_hash", cfg.hash},
          {"seed", std::to_string(cfg.seed)},
          {"data_spec_hash", [&] {
             char buf[17];
             std::snprintf(buf, sizeof buf, "%016llx",
                           static_cast<unsigned long long>(fnv1a(read_file(cfg.spec_path))));
             return std::string(buf);
           }()}};
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor head_rows_of(const Tensor& z, std::size_t n) {
  n = std::min(n, z.rows());
  const std::size_t d = z.cols();
  return Tensor(Shape{n, d}, std::vector<double>(z.data().begin(), z.data().begin() + n * d));
}

// Projections of generated points onto the knowledge direction and the first
// remaining attribute's direction.
std::vector<std::pair<double, double>> project(const ExperimentConfig& cfg, const Tensor& x) {
  const auto& k = cfg.spec.attribute(cfg.knowledge).direction;
  const auto& r = cfg.spec.attribute(cfg.remaining.front()).direction;
  std::vector<std::pair<double, double>> pts;
  pts.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double a = 0.0, b = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      a += k[c] * x.at(i, c);
      b += r[c] * x.at(i, c);
    }
    pts.emplace_back(a, b);
  }
  return pts;
}

std::string scatter_svg(const ExperimentConfig& cfg, const std::string& title, const Tensor& before,
                        const Tensor& after) {
  PlotSpec spec;
  spec.title = title;
  spec.x_label = cfg.knowledge + " direction";
  spec.y_label = cfg.remaining.front() + " direction";
  return render_svg(spec, {{"before", project(cfg, before), false}, {"after", project(cfg, after), false}});
}

std::size_t total_active(const ExtrapolationTrace& trace) {
  std::size_t n = 0;
  for (const auto& s : trace.steps) n += s.active;
  return n;
}

int extrapolate_full(const ExperimentConfig& cfg, const TrainedModels& models, const PkdConfig& pkd,
                     std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const GeneratorModel& g = models.generator;
  const double lambda_max = run_lambda_max(g, models.knowledge, pkd);
  const double lambda_max_est =
      lambda_max_estimate(g, models.knowledge, g.prior, cfg.lambda_max_batches, pkd.batch, pkd.seed);
  const PkdResult result = run_pkd(g, models.knowledge, pkd);
  const Tensor eval_z = eval_latents(g, pkd);
  const ProbeSet probes = make_probes(cfg, models);
  const MetricsReport report =
      compute_report(g, result.theta, models.knowledge, probes, result.trace, eval_z, cfg.metrics);

  const auto& dir = cfg.out_dir;
  write_file_atomic(dir / "trace.csv", result.trace.to_csv());
  result.theta.save(dir / "extrapolated.ckpt");
  write_file_atomic(dir / "report.csv", report.to_csv());
  const Tensor z_plot = head_rows_of(eval_z, 500);
  write_file_atomic(dir / "scatter.svg",
                    scatter_svg(cfg, "generated samples before/after extrapolation", generate(g, z_plot),
                                generate(g.with_params(result.theta), z_plot)));

  Manifest m = manifest_header(cfg, "extrapolate");
  m.emplace_back("lambda", format_double(pkd.lambda));
  m.emplace_back("epsilon", format_double(pkd.epsilon));
  m.emplace_back("steps", std::to_string(pkd.steps));
  m.emplace_back("batch", std::to_string(pkd.batch));
  m.emplace_back("lambda_max", format_double(lambda_max));
  m.emplace_back("lambda_max_estimate", format_double(lambda_max_est));
  m.emplace_back("status", result.trace.status);
  m.emplace_back("input_hash", g.params.hash_hex());
  m.emplace_back("output_hash", result.theta.hash_hex());
  m.emplace_back("knowledge_before", format_double(report.knowledge_before));
  m.emplace_back("knowledge_after", format_double(report.knowledge_after));
  m.emplace_back("delta_remaining", format_double(report.delta_remaining));
  m.emplace_back("target_knowledge", format_double(cfg.target_knowledge));
  m.emplace_back("target_shift", format_double(cfg.target_shift));
  write_manifest(dir / "extrapolate_manifest.txt", m);

  out << "lambda " << format_double(pkd.lambda) << " (lambda_max " << format_double(lambda_max) << ")\n"
      << "status " << result.trace.status << "\n"
      << "P_l > 0.5: " << format_double(report.knowledge_before) << " -> "
      << format_double(report.knowledge_after) << "\n"
      << "objective " << format_double(report.objective_before) << " -> "
      << format_double(report.objective_after) << "\n"
      << "remaining shift " << format_double(report.delta_remaining) << "\n"
      << "psr " << format_double(report.psr) << "\n"
      << "wrote " << dir.string() << " (" << format_double(seconds_since(t0)) << " s)\n";
  return kExitOk;
}

int extrapolate_dirac(const ExperimentConfig& cfg, const TrainedModels& models, const PkdConfig& pkd,
                      const std::filesystem::path& points_path, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const GeneratorModel& g = models.generator;
  const auto points = read_points_csv(points_path, cfg.spec.dimension());
  const ProbeSet posteriors = make_probes(cfg, models).only(Probe::Kind::kPosterior);

  std::vector<std::string> header = {"point", "reconstruction_error", "p_before", "p_after", "shift"};
  for (const auto& probe : posteriors.probes()) header.push_back("shift_" + probe.name);
  for (const char* h : {"lambda", "lambda_max", "active_total", "psr", "status"}) header.emplace_back(h);
  CsvWriter csv(header);

  const std::size_t d = cfg.spec.dimension();
  Tensor before(Shape{points.size(), d});
  Tensor after(Shape{points.size(), d});
  std::size_t reached = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const DiracResult r = run_dirac(g, models.knowledge, points[i], pkd, cfg.inversion);
    GeneratorModel local = g;
    local.prior = PriorSpec::gaussian(r.z0, pkd.xi);
    const double lambda_max = run_lambda_max(local, models.knowledge, pkd);
    const Tensor z0 = Tensor::row(r.z0);
    const Tensor xb = generate(g, z0);
    const Tensor xa = generate(g.with_params(r.run.theta), z0);
    const double p_before = models.knowledge.probability(xb.values());
    const double p_after = models.knowledge.probability(xa.values());
    const RemainingShift shift = delta_remaining(g, g.params, r.run.theta, posteriors, z0);
    if (p_after > cfg.target_knowledge && shift.aggregate < cfg.target_shift) ++reached;

    csv.cell(i).cell(r.reconstruction_error).cell(p_before).cell(p_after).cell(shift.aggregate);
    for (const auto& [name, v] : shift.per_probe) csv.cell(v);
    csv.cell(pkd.lambda).cell(lambda_max).cell(total_active(r.run.trace));
    csv.cell(psr(r.run.trace, g.params.size())).cell(r.run.trace.status);
    csv.end_row();

    const std::string stem = "dirac_" + std::to_string(i);
    write_file_atomic(cfg.out_dir / (stem + "_trace.csv"), r.run.trace.to_csv());
    r.run.theta.save(cfg.out_dir / (stem + ".ckpt"));
    for (std::size_t c = 0; c < d; ++c) {
      before.at(i, c) = xb[c];
      after.at(i, c) = xa[c];
    }
  }
  write_file_atomic(cfg.out_dir / "dirac.csv", csv.str());
  write_file_atomic(cfg.out_dir / "dirac_scatter.svg",
                    scatter_svg(cfg, "Dirac extrapolation of single samples", before, after));

  Manifest m = manifest_header(cfg, "extrapolate --dirac");
  m.emplace_back("points", points_path.string());
  m.emplace_back("points_hash", [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(read_file(points_path))));
    return std::string(buf);
  }());
  m.emplace_back("count", std::to_string(points.size()));
  m.emplace_back("lambda", format_double(pkd.lambda));
  m.emplace_back("epsilon", format_double(pkd.epsilon));
  m.emplace_back("steps", std::to_string(pkd.steps));
  m.emplace_back("xi", format_double(pkd.xi));
  m.emplace_back("reached_targets", std::to_string(reached));
  write_manifest(cfg.out_dir / "dirac_manifest.txt", m);

  out << "dirac points " << points.size() << ", reaching P_l > " << format_double(cfg.target_knowledge)
      << " with shift < " << format_double(cfg.target_shift) << ": " << reached << "\n"
      << "wrote " << cfg.out_dir.string() << " (" << format_double(seconds_since(t0)) << " s)\n";
  return kExitOk;
}

}  // namespace

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int cmd_pretrain(const ExperimentConfig& cfg, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  ensure_dir(cfg.out_dir);
  PretrainSummary summary;
  const TrainedModels models = pretrain_models(cfg, &summary);
  save_models(models, cfg, cfg.out_dir);

  Manifest m = manifest_header(cfg, "pretrain");
  m.emplace_back("generator_mmd2", format_double(summary.generator.final_mmd));
  m.emplace_back("generator_mmd2_threshold", format_double(cfg.mmd.threshold));
  m.emplace_back("generator_hash", models.generator.params.hash_hex());
  out << "generator MMD^2 " << format_double(summary.generator.final_mmd) << "\n";
  for (const auto& p : summary.posteriors) {
    const std::string k = "posterior_" + p.attribute;
    m.emplace_back(k + "_holdout_accuracy", format_double(p.fit.holdout_accuracy));
    m.emplace_back(k + "_holdout_calibration_error", format_double(p.fit.holdout_calibration_error));
    m.emplace_back(k + "_train_loss", format_double(p.fit.train_loss));
    m.emplace_back(k + "_hash", p.fit.params.hash_hex());
    out << "posterior " << p.attribute << ": held-out accuracy " << format_double(p.fit.holdout_accuracy)
        << ", calibration error " << format_double(p.fit.holdout_calibration_error) << "\n";
  }
  write_manifest(cfg.out_dir / "pretrain_manifest.txt", m);
  out << "wrote " << cfg.out_dir.string() << " (" << format_double(seconds_since(t0)) << " s)\n";
  return kExitOk;
}

int cmd_extrapolate(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& dirac_points,
                    std::ostream& out) {
  const TrainedModels models = load_models(cfg, cfg.models_dir);
  ensure_dir(cfg.out_dir);
  const PkdConfig pkd = resolved_pkd(cfg, models);
  if (dirac_points) {
    pkd.validate(true);
    return extrapolate_dirac(cfg, models, pkd, *dirac_points, out);
  }
  return extrapolate_full(cfg, models, pkd, out);
}

int cmd_sweep(const ExperimentConfig& cfg, const std::optional<std::vector<double>>& grid,
              std::optional<std::size_t> jobs, std::ostream& out) {
  const std::vector<double> lambdas = grid ? *grid : sweep_grid(cfg);
  if (lambdas.empty()) throw ConfigError("sweep: empty lambda grid");
  const std::size_t n_jobs = jobs.value_or(cfg.jobs);
  if (n_jobs < 1) throw ConfigError("sweep: --jobs must be at least 1");
  const auto t0 = std::chrono::steady_clock::now();
  const TrainedModels models = load_models(cfg, cfg.models_dir);
  ensure_dir(cfg.out_dir);
  PkdConfig base = resolved_pkd(cfg, models);
  base.fixed_batch = cfg.sweep_fixed_batch;
  const ProbeSet probes = make_probes(cfg, models);
  const SweepTable table = lambda_sweep(models.generator, models.knowledge, probes, lambdas, base,
                                        cfg.metrics, n_jobs);
  write_file_atomic(cfg.out_dir / "sweep.csv", table.to_csv());
  write_file_atomic(cfg.out_dir / "sweep.svg", table.to_svg());

  Manifest m = manifest_header(cfg, "sweep");
  std::string grid_text;
  for (double l : lambdas) grid_text += (grid_text.empty() ? "" : " ") + format_double(l);
  m.emplace_back("grid", grid_text);
  m.emplace_back("fixed_batch", base.fixed_batch ? "true" : "false");
  m.emplace_back("lipschitz", format_double(table.lipschitz));
  write_manifest(cfg.out_dir / "sweep_manifest.txt", m);

  out << "lambda,psr,delta,delta_remaining,ratio\n";
  for (const auto& r : table.rows) {
    out << format_double(r.lambda) << "," << format_double(r.psr) << "," << format_double(r.delta) << ","
        << format_double(r.delta_remaining) << "," << format_double(r.ratio) << "\n";
  }
  out << "wrote " << cfg.out_dir.string() << " (" << format_double(seconds_since(t0)) << " s)\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, std::ostream& out) {
  VerifyOptions opts;
  opts.seed = seed;
  const VerifyReport report = run_verify(suite, opts);
  out << report.to_text();
  out << (report.passed() ? "all checks passed\n" : "some checks FAILED\n");
  return report.passed() ? kExitOk : kExitFailure;
}

Tensor generated_points(const GeneratorModel& g, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed, "generated");
  return generate(g, g.prior.sample(n, g.latent_dim(), rng));
}

std::string points_csv(const Tensor& x) {
  std::vector<std::string> header;
  for (std::size_t c = 0; c < x.cols(); ++c) header.push_back("x_" + std::to_string(c));
  CsvWriter csv(header);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < x.cols(); ++c) csv.cell(x.at(i, c));
    csv.end_row();
  }
  return csv.str();
}

int cmd_sample(const ExperimentConfig& cfg, std::size_t n, const std::filesystem::path& path,
               bool generated, std::ostream& out) {
  if (n < 1) throw ConfigError("sample: n must be at least 1");
  std::string text;
  if (generated) {
    const TrainedModels models = load_models(cfg, cfg.models_dir);
    text = points_csv(generated_points(models.generator, n, cfg.seed));
  } else {
    text = to_csv(cfg.spec, sample(cfg.spec, n, substream_seed(cfg.seed, "data")));
  }
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_file_atomic(path, text);
  out << "wrote " << n << (generated ? " generated points" : " samples") << " to " << path.string() << "\n";
  return kExitOk;
}

}  // namespace pkd
