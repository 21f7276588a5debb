#pragma once

// Capacity x granularity x beta x seed experiment harness.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stcvae/data.hpp"
#include "stcvae/grouping.hpp"
#include "stcvae/losses.hpp"
#include "stcvae/metrics.hpp"
#include "stcvae/network.hpp"

namespace stcvae {

struct EvalSettings {
  std::size_t eval_batches = 10;  // omniscient-detector batches (>= 10)
  double epsilon = 1e-3;
  double delta = 0.01;
  FactorScoreOptions factor;
  std::size_t metric_samples = 10000;  // cap on samples used for MIG / SAP
  double holdout_fraction = 0.1;       // share of the dataset used for ELBO
};

struct TrialConfig {
  ModelSpec model;
  std::size_t b_hat = 1;
  double beta = 1.0;
  double alpha = 1.0;
  LossKind loss = LossKind::kBetaStcvae;
  std::size_t iterations = 2000;
  std::size_t batch_size = 256;
  double lr = 1e-4;
  EvalSettings eval;
};

struct TrialRecord {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t b_hat = 0;
  Granularity g;
  double beta = 0.0;
  std::size_t neuron_num = 0;
  std::size_t layers = 0;
  Arch arch = Arch::kMlp;
  std::size_t param_count = 0;
  double initial_elbo = 0.0;
  double final_elbo = 0.0;
  double recon = 0.0;
  double index_code_mi = 0.0;
  double tc_grouped = 0.0;
  double dimwise_kl = 0.0;
  double mig = 0.0;
  double factor_score = 0.0;
  double sap = 0.0;
  std::size_t omniscient_count = 0;
  std::optional<double> wall_time_s;
  std::string status = "ok";  // "ok" or "diverged@<iteration>"

  bool ok() const { return status == "ok"; }
};

struct ModelEvaluation {
  MetricScores scores;
  double index_code_mi = 0.0;
  double tc_grouped = 0.0;
  double dimwise_kl = 0.0;
};

/// Information terms and the collapsed-latent check over eval.eval_batches
/// minibatches drawn from `pool`; MIG / SAP / FactorVAE score over the dataset
/// (capped at eval.metric_samples).
ModelEvaluation evaluate_model(const VaeModel<float>& model, const FactorDataset& ds,
                               const std::vector<std::size_t>& pool, const LatentLayout& layout,
                               const EvalSettings& eval, std::size_t batch_size, std::uint64_t seed);

/// Trains one model and evaluates it. Divergence does not throw: the record
/// comes back with status "diverged@<iteration>". `trained`, if given,
/// receives the final model.
TrialRecord run_trial(const TrialConfig& cfg, const FactorDataset& ds, std::uint64_t seed,
                      std::optional<VaeModel<float>>* trained = nullptr);

// ---------------------------------------------------------------------------

struct SweepConfig {
  std::filesystem::path dataset;
  Arch arch = Arch::kMlp;
  std::size_t layers = 1;
  std::vector<std::size_t> latent_dims;
  std::vector<std::size_t> capacities;
  std::vector<Granularity> granularities;  // empty with all_granularities=false is an error
  bool all_granularities = false;
  std::vector<double> betas;
  std::size_t seeds = 3;
  std::uint64_t base_seed = 0;
  std::size_t iterations = 2000;
  std::size_t batch_size = 256;
  double lr = 1e-4;
  double alpha = 1.0;
  EvalSettings eval;
  std::filesystem::path out_dir;
  std::size_t workers = 1;
  bool record_wall_time = false;
};

struct GridKey {
  std::size_t n = 0;
  std::size_t neuron_num = 0;
  std::size_t b_hat = 0;
  double beta = 0.0;
  std::uint64_t seed = 0;

  auto operator<=>(const GridKey&) const = default;
};

GridKey key_of(const TrialRecord& r);

/// Every (n, b_hat, capacity, beta, seed) cell; throws ConfigError when a
/// requested granularity is not available for some n or a list is empty.
std::vector<GridKey> expand_grid(const SweepConfig& cfg);

struct SweepHooks {
  /// Stop after this many newly completed trials (simulates an interrupt).
  std::optional<std::size_t> stop_after;
  std::function<void(const TrialRecord&)> on_record;
};

struct SweepResult {
  std::vector<TrialRecord> records;  // sorted by grid key
  std::size_t resumed = 0;           // cells taken from an earlier journal
  bool complete = false;
  std::filesystem::path csv;
  std::filesystem::path manifest;
};

/// Runs the grid with a bounded worker pool. Completed trials are appended to
/// `<out>/trials.jsonl`; rerunning skips cells already journaled. The sorted
/// CSV is written once every cell is done.
SweepResult run_sweep(const SweepConfig& cfg, const SweepHooks& hooks = {});

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kCsvHeader =
    "seed,n,b_hat,g,beta,neuron_num,layers,arch,param_count,final_elbo,recon,index_code_mi,"
    "tc_grouped,dimwise_kl,mig,factor_score,sap,omniscient_count,wall_time_s,status";

std::string csv_row(const TrialRecord& r);
std::string records_csv(std::vector<TrialRecord> records);
std::vector<TrialRecord> parse_records_csv(const std::string& text);
std::vector<TrialRecord> read_records_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Trajectory analysis

struct OptimalPoint {
  Arch arch = Arch::kMlp;
  std::size_t layers = 0;
  double beta = 0.0;
  std::size_t capacity = 0;
  double mean_best_g = 0.0;       // argmax-ELBO g per seed, averaged over seeds
  double best_mean_elbo_g = 0.0;  // argmax over g of the seed-averaged ELBO
  std::size_t seeds = 0;
};

/// One point per (arch, layers, beta, capacity), failed trials excluded. Ties
/// go to the smaller g.
std::vector<OptimalPoint> optimal_granularity_points(const std::vector<TrialRecord>& records);

struct QuadraticFit {
  double a = 0.0, b = 0.0, c = 0.0;  // g = a*cap^2 + b*cap + c
  double residual_norm = 0.0;
};

/// Least squares through the normal equations. Needs >= 3 distinct capacities.
QuadraticFit fit_trajectory_curve(const std::vector<std::pair<double, double>>& points);

struct RegionCell {
  double beta = 0.0;
  std::size_t capacity = 0;
  Granularity g;
  std::size_t trials = 0;
  std::size_t flagged = 0;
  double fraction = 0.0;
  bool in_region = false;
};

std::vector<RegionCell> omniscient_region(const std::vector<TrialRecord>& records, double threshold);

/// Mean of 1/m over the distinct latent sizes present (the g of the
/// beta-TCVAE rows).
double baseline_granularity(const std::vector<TrialRecord>& records);

}  // namespace stcvae
