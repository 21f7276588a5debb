#pragma once

// JSON run configuration shared by the train and sweep commands.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stcvae/sweep.hpp"

namespace stcvae {

struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  Arch arch = Arch::kMlp;
  std::size_t layers = 1;
  LossKind loss = LossKind::kBetaStcvae;

  // single trial
  std::size_t n = 8;
  std::size_t b_hat = 1;
  double beta = 1.0;
  std::size_t neuron_num = 100;
  std::uint64_t seed = 0;
  std::size_t traversal_steps = 9;
  std::vector<std::size_t> traversal_dims;  // empty -> all latent dims

  // grid
  std::vector<std::size_t> latent_dims;
  std::vector<std::size_t> capacities;
  std::vector<Granularity> granularities;
  bool all_granularities = false;
  std::vector<double> betas;
  std::size_t seeds = 3;
  std::size_t workers = 1;
  bool record_wall_time = false;

  std::size_t iterations = 2000;
  std::size_t batch_size = 256;
  double lr = 1e-4;
  double alpha = 1.0;
  EvalSettings eval;
};

/// Parses "b/m" (e.g. "1/4") or a plain integer.
Granularity parse_granularity(const std::string& text);

/// Unknown keys and type mismatches throw ConfigError naming the key. Relative
/// paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

TrialConfig trial_config(const RunConfig& rc, const ImageShape& input);
SweepConfig sweep_config(const RunConfig& rc);

}  // namespace stcvae
