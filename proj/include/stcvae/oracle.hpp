#pragma once

// Closed-form and brute-force information quantities, in nats. These are the
// reference values the minibatch estimators are checked against.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "stcvae/grouping.hpp"

namespace stcvae {

struct GaussianSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Throws OracleDomainError unless cov is square, symmetric, positive
/// definite and matches the mean's length.
void validate(const GaussianSpec& spec);

/// log det of the sub-covariance indexed by `dims`.
double block_log_det(const GaussianSpec& spec, const Group& dims);

double gaussian_entropy(const GaussianSpec& spec);
double gaussian_tc(const GaussianSpec& spec);

/// KL between the joint and the product of the given block marginals. The
/// blocks must partition {0..n-1}.
double gaussian_block_tc(const GaussianSpec& spec, std::span<const Group> blocks);
double gaussian_grouped_tc(const GaussianSpec& spec, const LatentLayout& layout);

double gaussian_mi(const GaussianSpec& spec, const Group& left, const Group& right);

/// Sum of pair informations at level b (1-based). Levels 1..depth are the
/// peeled levels; b = depth + 1 is the final pair, equal to the residual.
double gaussian_mu_level(const GaussianSpec& spec, const PairingLevels& levels, std::size_t b);

/// Information between the two groups merged at the final level.
double gaussian_residual_mi(const GaussianSpec& spec, const PairingLevels& levels);

/// Unit-variance equicorrelated Gaussian.
GaussianSpec equicorrelated(std::size_t n, double rho);

/// A^T A + n * 1e-3 * I with A standard normal; always well conditioned.
GaussianSpec random_pd_spec(std::size_t n, std::mt19937_64& rng);

/// Probability table over small finite alphabets, row-major with the last
/// variable varying fastest.
struct DiscreteJoint {
  std::vector<std::size_t> alphabet;
  std::vector<double> prob;
};

double brute_force_tc(const DiscreteJoint& joint, std::span<const Group> blocks);
double brute_force_tc(const DiscreteJoint& joint, const LatentLayout& layout);

/// Two-dimensional Gaussian mixture with full component covariances.
struct Mixture2D {
  std::vector<double> weights;
  std::vector<Eigen::Vector2d> means;
  std::vector<Eigen::Matrix2d> covs;

  double log_density(const Eigen::Vector2d& z) const;
  double marginal_log_density(int axis, double x) const;
};

/// Total correlation of a 2-D mixture by trapezoid quadrature over
/// mean +- 8 sd of each marginal, `grid` points per axis.
double mixture_tc_quadrature(const Mixture2D& mix, int grid = 400);

}  // namespace stcvae
