#include "pkd/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pkd/error.hpp"
#include "pkd/io.hpp"

namespace pkd {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::size_t positive_size(const KeyValueConfig& raw, std::string_view key, std::int64_t fallback) {
  const std::int64_t v = raw.get_int(key, fallback);
  if (v < 1) throw ConfigError(raw.source() + ": key '" + std::string(key) + "' must be at least 1");
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> sizes_or(const KeyValueConfig& raw, std::string_view key,
                                  std::vector<std::size_t> fallback) {
  return raw.has(key) ? raw.get_sizes(key) : fallback;
}

Tensor stack_points(const std::vector<LabeledSample>& samples, std::size_t d) {
  Tensor x(Shape{samples.size(), d});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t c = 0; c < d; ++c) x.at(i, c) = samples[i].x[c];
  }
  return x;
}

std::vector<double> labels_of(const std::vector<LabeledSample>& samples, const std::string& attr) {
  std::vector<double> y;
  y.reserve(samples.size());
  for (const auto& s : samples) y.push_back(s.attributes.at(attr));
  return y;
}

PosteriorModel make_posterior(const ExperimentConfig& cfg, const std::string& attribute) {
  return PosteriorModel::create(cfg.spec.dimension(), cfg.posterior_hidden, "post_" + attribute);
}

GeneratorModel make_generator(const ExperimentConfig& cfg) {
  return GeneratorModel::create(cfg.latent_dim, cfg.generator_hidden, cfg.spec.dimension(),
                                cfg.activation);
}

ParamVector load_checkpoint(const std::filesystem::path& path, const ParamVector& layout) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing checkpoint: " + path.string());
  ParamVector loaded = ParamVector::load(path);
  if (!loaded.same_layout(layout)) {
    throw ConfigError("checkpoint " + path.string() + " does not match the configured model");
  }
  return loaded;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, const Overrides& overrides) {
  KeyValueConfig raw = KeyValueConfig::load(path);
  if (overrides.lambda) raw.set("pkd.lambda", format_double(*overrides.lambda));
  if (overrides.epsilon) raw.set("pkd.epsilon", format_double(*overrides.epsilon));
  if (overrides.steps) raw.set("pkd.K", std::to_string(*overrides.steps));
  if (overrides.batch) raw.set("pkd.m", std::to_string(*overrides.batch));
  if (overrides.seed) {
    raw.set("seed", std::to_string(*overrides.seed));
    raw.set("pkd.seed", std::to_string(*overrides.seed));
  }
  if (overrides.out) raw.set("out", std::filesystem::absolute(*overrides.out).string());
  if (overrides.models) raw.set("models", std::filesystem::absolute(*overrides.models).string());

  const std::filesystem::path spec_path = raw.get_path("data.spec");
  if (!std::filesystem::exists(spec_path)) {
    throw ConfigError("data spec not found: " + spec_path.string());
  }
  ExperimentConfig cfg(raw, AttributeMixtureSpec::load(spec_path));
  cfg.spec_path = spec_path;
  // Output locations do not change results, so they stay out of the hash.
  std::string canonical;
  for (const auto& [k, v] : raw.entries()) {
    if (k != "out" && k != "models") canonical += k + " = " + v + "\n";
  }
  cfg.hash = hex64(fnv1a(canonical));

  const std::int64_t seed = raw.get_int("seed");
  if (seed < 0) throw ConfigError(raw.source() + ": seed must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);

  cfg.out_dir = raw.get_path("out");
  cfg.models_dir = raw.has("models") ? raw.get_path("models") : cfg.out_dir;

  cfg.latent_dim = positive_size(raw, "generator.latent", 8);
  cfg.generator_hidden = sizes_or(raw, "generator.hidden", {64, 64});
  cfg.activation = parse_activation(raw.get_string("generator.activation", "tanh"));

  cfg.mmd.steps = positive_size(raw, "pretrain.steps", 3000);
  cfg.mmd.learning_rate = raw.get_double("pretrain.lr", cfg.mmd.learning_rate);
  cfg.mmd.optimizer = parse_optimizer(raw.get_string("pretrain.optimizer", "adam"));
  cfg.mmd.batch = positive_size(raw, "pretrain.batch", 256);
  if (raw.has("pretrain.bandwidths")) cfg.mmd.bandwidths = raw.get_doubles("pretrain.bandwidths");
  cfg.mmd.threshold = raw.get_double("pretrain.threshold", cfg.mmd.threshold);
  cfg.mmd.eval_size = positive_size(raw, "pretrain.eval_size", 2000);
  cfg.mmd.eval_every = positive_size(raw, "pretrain.eval_every", 100);
  cfg.mmd.seed = cfg.seed;

  cfg.knowledge = raw.get_string("posterior.knowledge");
  cfg.spec.attribute(cfg.knowledge);
  if (raw.has("posterior.remaining")) {
    cfg.remaining = raw.get_strings("posterior.remaining");
  } else {
    for (const auto& a : cfg.spec.attributes()) {
      if (a.name != cfg.knowledge) cfg.remaining.push_back(a.name);
    }
  }
  for (const auto& r : cfg.remaining) {
    cfg.spec.attribute(r);
    if (r == cfg.knowledge) throw ConfigError(raw.source() + ": attribute '" + r + "' is both knowledge and remaining");
  }
  cfg.posterior_hidden = sizes_or(raw, "posterior.hidden", {});
  cfg.train_size = positive_size(raw, "posterior.train", 20000);
  cfg.holdout_size = positive_size(raw, "posterior.holdout", 10000);
  cfg.posterior.epochs = positive_size(raw, "posterior.epochs", 1500);
  cfg.posterior.learning_rate = raw.get_double("posterior.lr", 0.1);
  cfg.posterior.optimizer = parse_optimizer(raw.get_string("posterior.optimizer", "adam"));
  cfg.posterior.seed = cfg.seed;

  cfg.pkd.steps = positive_size(raw, "pkd.K", 10);
  cfg.pkd.epsilon = raw.get_double("pkd.epsilon", 1e-3);
  cfg.pkd.lambda = raw.get_double("pkd.lambda", 0.0);
  if (raw.has("pkd.lambda0") && !overrides.lambda) cfg.pkd.lambda0 = raw.get_double("pkd.lambda0");
  cfg.pkd.batch = positive_size(raw, "pkd.m", 64);
  const std::int64_t pkd_seed = raw.get_int("pkd.seed", seed);
  if (pkd_seed < 0) throw ConfigError(raw.source() + ": pkd.seed must be non-negative");
  cfg.pkd.seed = static_cast<std::uint64_t>(pkd_seed);
  cfg.pkd.xi = raw.get_double("pkd.xi", 0.01);
  cfg.pkd.eval_size = positive_size(raw, "pkd.eval_size", 10000);
  cfg.pkd.fixed_batch = raw.get_bool("pkd.fixed_batch", false);
  cfg.pkd.validate(false);

  cfg.inversion.restarts = positive_size(raw, "inversion.restarts", 8);
  cfg.inversion.steps = positive_size(raw, "inversion.steps", 3000);
  cfg.inversion.initial_step = raw.get_double("inversion.initial_step", cfg.inversion.initial_step);
  cfg.inversion.tolerance = raw.get_double("inversion.tolerance", cfg.inversion.tolerance);
  cfg.inversion.seed = cfg.seed;
  cfg.lambda_max_batches = positive_size(raw, "lambda_max.batches", 8);

  cfg.metrics.lipschitz_thetas = positive_size(raw, "metrics.lipschitz_thetas", 4);
  cfg.metrics.lipschitz_latents = positive_size(raw, "metrics.lipschitz_latents", 32);
  cfg.metrics.compute_ppr = raw.get_bool("metrics.ppr", true);
  cfg.metrics.seed = cfg.seed;
  cfg.coordinate_probes = sizes_or(raw, "metrics.coordinates", {});
  for (std::size_t c : cfg.coordinate_probes) {
    if (c >= cfg.spec.dimension()) {
      throw ConfigError(raw.source() + ": metrics.coordinates entry " + std::to_string(c) + " out of range");
    }
  }

  if (raw.has("sweep.grid")) {
    cfg.sweep_grid = raw.get_doubles("sweep.grid");
    if (cfg.sweep_grid.empty()) throw ConfigError(raw.source() + ": sweep.grid is empty");
  }
  cfg.sweep_points = positive_size(raw, "sweep.points", 8);
  cfg.sweep_min = raw.get_double("sweep.min", cfg.sweep_min);
  cfg.sweep_max = raw.get_double("sweep.max", cfg.sweep_max);
  if (!(cfg.sweep_min > 0.0 && cfg.sweep_max >= cfg.sweep_min)) {
    throw ConfigError(raw.source() + ": need 0 < sweep.min <= sweep.max");
  }
  cfg.sweep_fixed_batch = raw.get_bool("sweep.fixed_batch", true);
  cfg.jobs = positive_size(raw, "sweep.jobs", 1);

  cfg.target_knowledge = raw.get_double("targets.knowledge_fraction", cfg.target_knowledge);
  cfg.target_shift = raw.get_double("targets.max_remaining_shift", cfg.target_shift);
  return cfg;
}

TrainedModels pretrain_models(const ExperimentConfig& cfg, PretrainSummary* summary) {
  GeneratorModel g = make_generator(cfg);
  PretrainResult gen = pretrain_generator(cfg.spec, g, cfg.mmd);
  g.params = gen.params;

  const std::size_t d = cfg.spec.dimension();
  const auto train = sample(cfg.spec, cfg.train_size, substream_seed(cfg.seed, "posterior-train"));
  const auto holdout = sample(cfg.spec, cfg.holdout_size, substream_seed(cfg.seed, "posterior-holdout"));
  const Tensor train_x = stack_points(train, d);
  const Tensor holdout_x = stack_points(holdout, d);

  std::vector<PosteriorSummary> fits;
  auto fit = [&](const std::string& attr) {
    PosteriorModel p = make_posterior(cfg, attr);
    PosteriorTrainResult r = train_posterior(train_x, labels_of(train, attr), holdout_x,
                                             labels_of(holdout, attr), p, cfg.posterior);
    p.params = r.params;
    fits.push_back({attr, std::move(r)});
    return p;
  };

  PosteriorModel knowledge = fit(cfg.knowledge);
  std::vector<std::pair<std::string, PosteriorModel>> remaining;
  for (const auto& r : cfg.remaining) remaining.emplace_back(r, fit(r));

  if (summary) {
    summary->generator = std::move(gen);
    summary->posteriors = std::move(fits);
  }
  return TrainedModels{std::move(g), std::move(knowledge), std::move(remaining)};
}

std::filesystem::path generator_checkpoint(const std::filesystem::path& dir) {
  return dir / "generator.ckpt";
}

std::filesystem::path posterior_checkpoint(const std::filesystem::path& dir, const std::string& attribute) {
  return dir / ("posterior_" + attribute + ".ckpt");
}

void save_models(const TrainedModels& models, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  models.generator.params.save(generator_checkpoint(dir));
  models.knowledge.params.save(posterior_checkpoint(dir, cfg.knowledge));
  for (const auto& [name, p] : models.remaining) p.params.save(posterior_checkpoint(dir, name));
}

TrainedModels load_models(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  GeneratorModel g = make_generator(cfg);
  g.params = load_checkpoint(generator_checkpoint(dir), g.params);
  PosteriorModel k = make_posterior(cfg, cfg.knowledge);
  k.params = load_checkpoint(posterior_checkpoint(dir, cfg.knowledge), k.params);
  std::vector<std::pair<std::string, PosteriorModel>> remaining;
  for (const auto& r : cfg.remaining) {
    PosteriorModel p = make_posterior(cfg, r);
    p.params = load_checkpoint(posterior_checkpoint(dir, r), p.params);
    remaining.emplace_back(r, std::move(p));
  }
  return TrainedModels{std::move(g), std::move(k), std::move(remaining)};
}

ProbeSet make_probes(const ExperimentConfig& cfg, const TrainedModels& models) {
  ProbeSet probes;
  for (const auto& [name, p] : models.remaining) probes.add_posterior(name, p);
  for (std::size_t c : cfg.coordinate_probes) {
    probes.add_coordinate("x" + std::to_string(c), c, cfg.spec.dimension());
  }
  return probes;
}

PkdConfig resolved_pkd(const ExperimentConfig& cfg, const TrainedModels& models) {
  PkdConfig out = cfg.pkd;
  if (!out.lambda0) return out;
  const ProbeSet posteriors = make_probes(cfg, models).only(Probe::Kind::kPosterior);
  Tensor z = eval_latents(models.generator, out);
  const std::size_t rows = std::min(cfg.metrics.lipschitz_latents, z.rows());
  const std::size_t d = z.cols();
  Tensor head(Shape{rows, d}, std::vector<double>(z.data().begin(), z.data().begin() + rows * d));
  const double l = lipschitz_estimate(models.generator, models.generator.params, posteriors,
                                      out.steps * out.epsilon, cfg.metrics.lipschitz_thetas, head,
                                      cfg.metrics.seed);
  out.lambda = resolve_lambda(out, l);
  out.lambda0.reset();
  return out;
}

std::vector<double> sweep_grid(const ExperimentConfig& cfg) {
  if (!cfg.sweep_grid.empty()) return cfg.sweep_grid;
  return log_spaced(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points);
}

std::vector<std::vector<double>> read_points_csv(const std::filesystem::path& path, std::size_t d) {
  if (!std::filesystem::exists(path)) throw ConfigError("points file not found: " + path.string());
  std::istringstream in(read_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (char& c : line) {
      if (c == ',' || c == '\r') c = ' ';
    }
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream cells(line);
    std::vector<double> row;
    std::string tok;
    bool numeric = true;
    while (cells >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": non-numeric entry '" + tok + "'");
    }
    if (row.size() != d) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(d) +
                        " values, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("points file has no rows: " + path.string());
  return rows;
}

}  // namespace pkd
