#pragma once

// Minibatch-weighted-sampling estimates of aggregate-posterior log densities
// and of every information term built from them. All quantities are in nats
// and averaged over the batch.

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <vector>

#include "stcvae/grouping.hpp"

namespace stcvae {

using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Diagonal-Gaussian posteriors q(z|x_j) for a batch of M samples, with one
/// reparameterized draw z per sample.
struct PosteriorBatch {
  MatrixXdR mu;       // M x n
  MatrixXdR log_var;  // M x n
  MatrixXdR z;        // M x n
  std::size_t dataset_size = 1;

  std::size_t batch() const { return static_cast<std::size_t>(mu.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(mu.cols()); }
};

/// Throws EstimatorDomainError on shape mismatch, non-finite entries or
/// dataset_size < M.
void validate(const PosteriorBatch& batch);

/// Normalizer applied after the logsumexp over the batch.
///   kBatchMixture : -log M      (q(z) approximated by the batch mixture)
///   kDatasetScaled: -log(N * M) (constant form from the beta-TCVAE reference
///                                code; biased by -log N per marginal)
enum class MarginalNorm { kBatchMixture, kDatasetScaled };

/// log N(z[m][d]; mu[j][d], exp(log_var[j][d])) stored as one M x M matrix
/// per latent dimension: per_dim[d](m, j).
struct LogDensityTensor {
  std::vector<MatrixXdR> per_dim;

  std::size_t batch() const { return per_dim.empty() ? 0 : static_cast<std::size_t>(per_dim[0].rows()); }
  std::size_t dim() const { return per_dim.size(); }
  double operator()(std::size_t m, std::size_t j, std::size_t d) const {
    return per_dim[d](static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j));
  }
};

LogDensityTensor log_density_matrix(const PosteriorBatch& batch);

/// Caches log q(z_S) per dimension set so shared terms are evaluated once.
class MarginalEstimator {
 public:
  explicit MarginalEstimator(const PosteriorBatch& batch, MarginalNorm norm = MarginalNorm::kBatchMixture);

  /// Entry m estimates log q(z_{m,dims}) under the aggregate posterior.
  const Eigen::VectorXd& log_marginal(const Group& dims);

  /// log q(z_m | x_m), summed over all dimensions.
  const Eigen::VectorXd& log_conditional() const { return log_conditional_; }

  /// Standard-normal prior log density of z_m, summed over dimensions.
  const Eigen::VectorXd& log_prior() const { return log_prior_; }

  /// Batch mean of log q(z_all) - sum_k log q(z_block_k).
  double block_tc(const std::vector<Group>& blocks);

  /// Batch mean of log q(z_{L u R}) - log q(z_L) - log q(z_R).
  double pair_mi(const Group& left, const Group& right);

  const LogDensityTensor& tensor() const { return tensor_; }
  /// log M (batch mixture) or log(N M) (dataset scaled).
  double offset() const { return offset_; }
  std::size_t dim() const { return tensor_.dim(); }

 private:
  LogDensityTensor tensor_;
  double offset_;
  std::map<Group, Eigen::VectorXd> cache_;
  Eigen::VectorXd log_conditional_;
  Eigen::VectorXd log_prior_;
};

Eigen::VectorXd mws_log_marginal(const PosteriorBatch& batch, const Group& dims,
                                 MarginalNorm norm = MarginalNorm::kBatchMixture);

struct InfoEstimate {
  double recon = 0.0;
  double index_code_mi = 0.0;
  double tc_full = 0.0;
  double tc_grouped = 0.0;
  std::vector<double> mu_levels;  // levels 1..depth of the pairing scheme
  double residual = 0.0;          // information between the final two groups
  double dimwise_kl = 0.0;
};

InfoEstimate estimate_info(const PosteriorBatch& batch, const LatentLayout& layout,
                           const PairingLevels& levels, double recon_loglik,
                           MarginalNorm norm = MarginalNorm::kBatchMixture);

struct DecompositionReport {
  double tc_full = 0.0;
  std::vector<double> mu_levels;
  double residual = 0.0;
};

DecompositionReport decomposition_report(const PosteriorBatch& batch, const PairingLevels& levels,
                                         MarginalNorm norm = MarginalNorm::kBatchMixture);

/// Number of pairing levels whose merged groups coincide with the layout's
/// blocks, if any. For such layouts tc_full == tc_grouped + sum of the first
/// that-many mu_levels.
std::optional<std::size_t> peeled_levels(const LatentLayout& layout, const PairingLevels& levels);

/// Objective that is linear in batch means of log densities:
///   sum_S c_S * mean_m log q(z_{m,S})
///   + conditional_coef * mean_m log q(z_m|x_m) + prior_coef * mean_m log p(z_m)
struct LinearObjective {
  std::vector<std::pair<Group, double>> marginal_terms;
  double conditional_coef = 0.0;
  double prior_coef = 0.0;
};

struct ObjectiveGradient {
  double value = 0.0;
  MatrixXdR d_mu;
  MatrixXdR d_log_var;
  MatrixXdR d_z;  // partial w.r.t. z holding mu and log_var fixed
};

ObjectiveGradient evaluate_with_gradient(const PosteriorBatch& batch, const LinearObjective& objective,
                                         MarginalNorm norm = MarginalNorm::kBatchMixture);

}  // namespace stcvae
