#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pkd/config.hpp"
#include "pkd/metrics.hpp"
#include "pkd/pkd_core.hpp"
#include "pkd/synth_data.hpp"

namespace pkd {

// Command-line values that win over the config file.
struct Overrides {
  std::optional<double> lambda;
  std::optional<double> epsilon;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> models;
};

// Everything one experiment needs, parsed from a single config file. See
// configs/toy_faces.cfg for the documented key set.
struct ExperimentConfig {
  ExperimentConfig(KeyValueConfig raw, AttributeMixtureSpec spec)
      : raw(std::move(raw)), spec(std::move(spec)) {}

  KeyValueConfig raw;
  std::string hash;  // FNV-1a of the canonical config after overrides, minus out/models
  std::uint64_t seed = 0;
  AttributeMixtureSpec spec;
  std::filesystem::path spec_path;
  std::filesystem::path out_dir;
  std::filesystem::path models_dir;  // where checkpoints are read; defaults to out_dir

  std::size_t latent_dim = 8;
  std::vector<std::size_t> generator_hidden;
  Activation activation = Activation::kTanh;
  MmdConfig mmd;

  std::string knowledge;               // attribute l
  std::vector<std::string> remaining;  // attributes r
  std::vector<std::size_t> posterior_hidden;
  std::size_t train_size = 20000;
  std::size_t holdout_size = 10000;
  PosteriorTrainConfig posterior;

  PkdConfig pkd;
  InversionConfig inversion;
  std::size_t lambda_max_batches = 8;

  MetricsOptions metrics;
  std::vector<std::size_t> coordinate_probes;

  std::vector<double> sweep_grid;      // explicit grid, empty for log-spaced
  std::size_t sweep_points = 8;
  double sweep_min = 1e-3;             // log-spaced grid bounds
  double sweep_max = 0.3;
  bool sweep_fixed_batch = true;
  std::size_t jobs = 1;

  double target_knowledge = 0.9;       // fraction with P_l > 0.5 after the run
  double target_shift = 0.1;           // bound on the remaining-probe shift

  static ExperimentConfig load(const std::filesystem::path& path, const Overrides& overrides = {});
};

struct TrainedModels {
  GeneratorModel generator;
  PosteriorModel knowledge;
  std::vector<std::pair<std::string, PosteriorModel>> remaining;
};

struct PosteriorSummary {
  std::string attribute;
  PosteriorTrainResult fit;  // holdout_calibration_error is the gap to the true posterior
};

struct PretrainSummary {
  PretrainResult generator;
  std::vector<PosteriorSummary> posteriors;
};

// Fits the generator by MMD and one posterior per attribute (knowledge
// first). Deterministic given the config.
TrainedModels pretrain_models(const ExperimentConfig& cfg, PretrainSummary* summary = nullptr);

std::filesystem::path generator_checkpoint(const std::filesystem::path& dir);
std::filesystem::path posterior_checkpoint(const std::filesystem::path& dir, const std::string& attribute);

void save_models(const TrainedModels& models, const ExperimentConfig& cfg, const std::filesystem::path& dir);
// Throws ConfigError naming the first missing checkpoint.
TrainedModels load_models(const ExperimentConfig& cfg, const std::filesystem::path& dir);

// Remaining-attribute posteriors plus the configured coordinate probes.
ProbeSet make_probes(const ExperimentConfig& cfg, const TrainedModels& models);

// PkdConfig with lambda resolved (lambda0 * L when lambda0 is configured).
PkdConfig resolved_pkd(const ExperimentConfig& cfg, const TrainedModels& models);

// Lambda grid of the sweep: the explicit grid if configured, else
// sweep_points log-spaced values in [sweep_min, sweep_max].
std::vector<double> sweep_grid(const ExperimentConfig& cfg);

// Rows of numbers, comma or whitespace separated; a non-numeric first line is
// taken as a header. Throws ConfigError on ragged rows or a width other than d.
std::vector<std::vector<double>> read_points_csv(const std::filesystem::path& path, std::size_t d);

}  // namespace pkd
