#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pkd/commands.hpp"

namespace {

struct FlagValues {
  std::string config;
  std::optional<double> lambda;
  std::optional<double> epsilon;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> models;
};

void add_config_flags(CLI::App* cmd, FlagValues& f, bool run_flags) {
  cmd->add_option("config", f.config, "experiment config file")->required();
  cmd->add_option("--seed", f.seed, "global seed");
  cmd->add_option("--out", f.out, "output directory");
  if (!run_flags) return;
  cmd->add_option("--models", f.models, "directory holding the pretrained checkpoints");
  cmd->add_option("--lambda", f.lambda, "sparsity threshold");
  cmd->add_option("--epsilon", f.epsilon, "per-coordinate step size");
  cmd->add_option("--steps", f.steps, "number of steps K");
  cmd->add_option("--batch", f.batch, "latent batch size m");
}

pkd::ExperimentConfig load(const FlagValues& f) {
  pkd::Overrides o;
  o.lambda = f.lambda;
  o.epsilon = f.epsilon;
  o.steps = f.steps;
  o.batch = f.batch;
  o.seed = f.seed;
  if (f.out) o.out = *f.out;
  if (f.models) o.models = *f.models;
  return pkd::ExperimentConfig::load(f.config, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse knowledge extrapolation of small generators"};
  app.require_subcommand(1);

  FlagValues pretrain_flags;
  auto* pretrain = app.add_subcommand("pretrain", "fit the generator and posteriors, write checkpoints");
  add_config_flags(pretrain, pretrain_flags, false);

  FlagValues extrapolate_flags;
  std::optional<std::string> dirac;
  auto* extrapolate = app.add_subcommand("extrapolate", "run extrapolation from pretrained checkpoints");
  add_config_flags(extrapolate, extrapolate_flags, true);
  extrapolate->add_option("--dirac", dirac, "CSV of target points; one Dirac run per row");

  FlagValues sweep_flags;
  std::optional<std::vector<double>> grid;
  std::optional<std::size_t> jobs;
  bool grid_given = false;
  auto* sweep = app.add_subcommand("sweep", "run one extrapolation per lambda and tabulate metrics");
  add_config_flags(sweep, sweep_flags, true);
  auto* grid_opt = sweep->add_option("--grid", grid, "lambda values (comma separated)")
                       ->delimiter(',')
                       ->expected(0, -1);
  sweep->add_option("--jobs", jobs, "worker threads");

  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "run the property suites");
  verify->add_option("--suite", suite, "theorems, gradients or all");
  verify->add_option("--seed", verify_seed, "seed of the random instances");

  FlagValues sample_flags;
  std::size_t n = 1000;
  std::string path = "samples.csv";
  bool generated = false;
  auto* sample_cmd = app.add_subcommand("sample", "write labelled draws from the data spec");
  add_config_flags(sample_cmd, sample_flags, false);
  sample_cmd->add_option("-n", n, "number of samples");
  sample_cmd->add_option("--path", path, "output CSV");
  sample_cmd->add_flag("--generated", generated, "draw G(z) from the pretrained generator");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? pkd::kExitOk : pkd::kExitUsage;
  }
  grid_given = grid_opt->count() > 0;

  return pkd::run_guarded(
      [&]() -> int {
        if (*pretrain) return pkd::cmd_pretrain(load(pretrain_flags), std::cout);
        if (*extrapolate) {
          std::optional<std::filesystem::path> points;
          if (dirac) points = *dirac;
          return pkd::cmd_extrapolate(load(extrapolate_flags), points, std::cout);
        }
        if (*sweep) {
          std::optional<std::vector<double>> g;
          if (grid_given) g = grid.value_or(std::vector<double>{});
          return pkd::cmd_sweep(load(sweep_flags), g, jobs, std::cout);
        }
        if (*verify) return pkd::cmd_verify(suite, verify_seed, std::cout);
        if (*sample_cmd) return pkd::cmd_sample(load(sample_flags), n, path, generated, std::cout);
        return pkd::kExitUsage;
      },
      std::cerr);
}
