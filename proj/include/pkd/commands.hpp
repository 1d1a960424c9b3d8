#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pkd/experiment.hpp"

namespace pkd {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // internal check failure or numerical error
inline constexpr int kExitUsage = 2;    // user or config error

// Runs `body`, reporting exceptions on `err`: ConfigError maps to kExitUsage,
// anything else to kExitFailure.
int run_guarded(const std::function<int()>& body, std::ostream& err);

// Writes generator.ckpt, posterior_<attr>.ckpt and pretrain_manifest.txt to
// the output directory.
int cmd_pretrain(const ExperimentConfig& cfg, std::ostream& out);

// Without `dirac_points`: trace.csv, extrapolated.ckpt, report.csv,
// scatter.svg and extrapolate_manifest.txt. With a points file: one Dirac run
// per row, written as dirac.csv, dirac_<i>_trace.csv, dirac_<i>.ckpt,
// dirac_scatter.svg and dirac_manifest.txt.
int cmd_extrapolate(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& dirac_points,
                    std::ostream& out);

// `grid` replaces the configured grid when given; an empty grid is a usage
// error. Writes sweep.csv, sweep.svg and sweep_manifest.txt.
int cmd_sweep(const ExperimentConfig& cfg, const std::optional<std::vector<double>>& grid,
              std::optional<std::size_t> jobs, std::ostream& out);

// Prints one line per check; kExitFailure if any fails.
int cmd_verify(const std::string& suite, std::uint64_t seed, std::ostream& out);

// n labelled draws from the data spec as CSV at `path`; with `generated`,
// n points G(z) from the pretrained generator instead (x_0,...,x_{d-1}).
int cmd_sample(const ExperimentConfig& cfg, std::size_t n, const std::filesystem::path& path,
               bool generated, std::ostream& out);

// n points G(z), z from the generator prior on the "generated" substream.
Tensor generated_points(const GeneratorModel& g, std::size_t n, std::uint64_t seed);
std::string points_csv(const Tensor& x);

}  // namespace pkd
