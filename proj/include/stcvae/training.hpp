#pragma once

// Glue between the network, the estimators and the losses: one combined
// forward/backward pass, held-out ELBO evaluation and latent traversals.

#include <filesystem>
#include <span>

#include "stcvae/data.hpp"
#include "stcvae/estimators.hpp"
#include "stcvae/losses.hpp"
#include "stcvae/network.hpp"

namespace stcvae {

struct StepResult {
  double objective = 0.0;  // recon - penalty, maximized
  double recon = 0.0;
  double penalty = 0.0;
};

/// Computes the training objective for a batch and accumulates the gradient of
/// its negation into model.params().grads (caller zeroes them first).
template <typename S>
StepResult loss_and_gradients(VaeModel<S>& model, const Mat<S>& x, const Mat<S>& noise, LossKind kind,
                              const LossConfig& cfg, std::size_t dataset_size,
                              MarginalNorm norm = MarginalNorm::kBatchMixture);

/// Posterior batch in double precision for the estimators.
template <typename S>
PosteriorBatch to_posterior_batch(const Mat<S>& mu, const Mat<S>& log_var, const Mat<S>& z,
                                  std::size_t dataset_size);

struct ElboReport {
  double elbo = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

/// Unweighted ELBO over `indices`, one posterior draw per image from a
/// generator seeded with `noise_seed`.
ElboReport evaluate_elbo(const VaeModel<float>& model, const FactorDataset& ds, std::span<const std::size_t> indices,
                         std::uint64_t noise_seed, std::size_t chunk = 256);

/// Posterior means for `indices`, as doubles.
Eigen::MatrixXd latent_means(const VaeModel<float>& model, const FactorDataset& ds,
                             std::span<const std::size_t> indices, std::size_t chunk = 512);

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes a grid: row r varies latent dims[r] over `steps` evenly spaced
/// values in [lo, hi] with all other dimensions 0. One tile per cell.
GrayImage traversal_strip(const VaeModel<float>& model, std::span<const std::size_t> dims, std::size_t steps,
                          double lo = -2.0, double hi = 2.0);

void write_pgm(const GrayImage& img, const std::filesystem::path& path);

/// Keeps freed buffers mapped instead of returning them to the OS (glibc
/// only, no-op elsewhere). Per-step matrices otherwise page-fault on every
/// iteration.
void retain_heap();

}  // namespace stcvae
