#pragma once

// Disentanglement metrics against ground-truth factors, and the
// collapsed-marginal ("omniscient" latent) detector.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stcvae/data.hpp"
#include "stcvae/estimators.hpp"

namespace stcvae {

struct MetricScores {
  double mig = 0.0;
  double factor_score = 0.0;
  double sap = 0.0;
  std::vector<double> per_dim_entropy;
  std::vector<bool> omniscient_flags;

  std::size_t omniscient_count() const;
};

inline constexpr std::size_t kMigBins = 20;

/// Rank-based equal-occupancy binning of one column; tied values share a bin.
std::vector<int> equal_occupancy_bins(const Eigen::VectorXd& column, std::size_t bins);

/// Plug-in mutual information (nats) of two discrete label vectors.
double discrete_mi(std::span<const int> a, std::span<const int> b);
double discrete_entropy(std::span<const int> a);

/// latents: S x n, factors: S x K.
double mig(const Eigen::MatrixXd& latents, const Eigen::MatrixXi& factors);

double sap(const Eigen::MatrixXd& latents, const Eigen::MatrixXi& factors);

/// Maps dataset indices to latent means, one row per index.
using EncodeFn = std::function<Eigen::MatrixXd(std::span<const std::size_t>)>;

struct FactorScoreOptions {
  std::size_t votes = 800;        // training episodes for the majority-vote classifier
  std::size_t eval_votes = 400;   // held-out episodes that are scored
  std::size_t batch = 64;         // samples per episode
  std::size_t std_samples = 10000;
};

double factor_vae_score(const EncodeFn& encode, const FactorDataset& ds, std::uint64_t seed,
                        const FactorScoreOptions& opt = {});

struct OmniscientReport {
  std::vector<bool> flags;
  std::vector<double> mean_entropy;    // per dimension, averaged over batches
  std::vector<double> below_fraction;  // share of batches with H < epsilon
};

/// Flags dimension i iff the share of evaluation batches whose estimated
/// marginal entropy is below epsilon is at least 1 - delta. Needs >= 10
/// batches.
OmniscientReport omniscient_flags(std::span<const PosteriorBatch> batches, double epsilon, double delta);

}  // namespace stcvae
