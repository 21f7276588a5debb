#pragma once

// Posterior batches with known aggregate distributions, for checking the
// minibatch estimators against closed forms.

#include <random>
#include <span>
#include <vector>

#include "stcvae/estimators.hpp"
#include "stcvae/oracle.hpp"

namespace stcvae {

/// Aggregate posterior exactly N(0, (1-rho) I + rho 11^T): each row has mean
/// sqrt(rho) w 1 with w ~ N(0,1) and isotropic variance 1 - rho.
PosteriorBatch equicorrelated_batch(std::size_t n, double rho, std::size_t batch, std::mt19937_64& rng);

/// Two well separated components with diagonal covariances.
Mixture2D two_blob_mixture();

/// Each row is drawn from one component (chosen by weight) and carries that
/// component's mean and variances as its posterior. Needs diagonal covs.
PosteriorBatch mixture_batch(const Mixture2D& mix, std::size_t batch, std::mt19937_64& rng);

/// Standard deviation of a 1-D Gaussian with the given differential entropy.
double sigma_for_entropy(double entropy);

/// `count` batches where dimension d has identical posteriors N(0, sigmas[d]^2)
/// and z at the normal quantile midpoints sigma * Phi^{-1}((m + 0.5) / M), rows
/// permuted per batch and per dimension. dataset_size == batch.
std::vector<PosteriorBatch> quantile_marginal_batches(std::span<const double> sigmas, std::size_t batch,
                                                      std::size_t count, std::uint64_t seed);

}  // namespace stcvae
