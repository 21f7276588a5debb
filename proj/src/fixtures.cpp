#include "stcvae/fixtures.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "stcvae/errors.hpp"

namespace stcvae {

PosteriorBatch equicorrelated_batch(std::size_t n, double rho, std::size_t batch, std::mt19937_64& rng) {
  if (!(rho >= 0.0 && rho < 1.0)) throw OracleDomainError("equicorrelated batch needs rho in [0, 1)");
  std::normal_distribution<double> normal;
  const auto rows = static_cast<Eigen::Index>(batch), cols = static_cast<Eigen::Index>(n);
  PosteriorBatch b;
  b.mu.resize(rows, cols);
  b.log_var.setConstant(rows, cols, std::log(1.0 - rho));
  b.z.resize(rows, cols);
  const double sd = std::sqrt(1.0 - rho);
  for (Eigen::Index m = 0; m < rows; ++m) {
    const double shared = std::sqrt(rho) * normal(rng);
    for (Eigen::Index d = 0; d < cols; ++d) {
      b.mu(m, d) = shared;
      b.z(m, d) = shared + sd * normal(rng);
    }
  }
  b.dataset_size = batch;
  return b;
}

Mixture2D two_blob_mixture() {
  Mixture2D mix;
  mix.weights = {0.5, 0.5};
  mix.means = {Eigen::Vector2d(-1.5, -1.0), Eigen::Vector2d(1.5, 1.0)};
  Eigen::Matrix2d a = Eigen::Matrix2d::Zero(), b = Eigen::Matrix2d::Zero();
  a.diagonal() << 0.6, 0.8;
  b.diagonal() << 0.9, 0.5;
  mix.covs = {a, b};
  return mix;
}

PosteriorBatch mixture_batch(const Mixture2D& mix, std::size_t batch, std::mt19937_64& rng) {
  for (const auto& c : mix.covs)
    if (c(0, 1) != 0.0 || c(1, 0) != 0.0) throw OracleDomainError("mixture batch needs diagonal covariances");
  std::discrete_distribution<std::size_t> pick(mix.weights.begin(), mix.weights.end());
  std::normal_distribution<double> normal;
  const auto rows = static_cast<Eigen::Index>(batch);
  PosteriorBatch b;
  b.mu.resize(rows, 2);
  b.log_var.resize(rows, 2);
  b.z.resize(rows, 2);
  for (Eigen::Index m = 0; m < rows; ++m) {
    const std::size_t k = pick(rng);
    for (Eigen::Index d = 0; d < 2; ++d) {
      const double var = mix.covs[k](d, d);
      b.mu(m, d) = mix.means[k](d);
      b.log_var(m, d) = std::log(var);
      b.z(m, d) = b.mu(m, d) + std::sqrt(var) * normal(rng);
    }
  }
  b.dataset_size = batch;
  return b;
}

double sigma_for_entropy(double entropy) {
  return std::exp(entropy - 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e));
}

std::vector<PosteriorBatch> quantile_marginal_batches(std::span<const double> sigmas, std::size_t batch,
                                                      std::size_t count, std::uint64_t seed) {
  const std::size_t dims = sigmas.size();
  if (batch < 2 || dims == 0) throw OracleDomainError("bad quantile batch parameters");
  for (double s : sigmas)
    if (!(s > 0.0)) throw OracleDomainError("quantile batch sigma must be positive");
  const boost::math::normal_distribution<double> unit;
  std::vector<double> q(batch);
  for (std::size_t m = 0; m < batch; ++m)
    q[m] = boost::math::quantile(unit, (static_cast<double>(m) + 0.5) / static_cast<double>(batch));

  std::mt19937_64 rng(seed);
  const auto rows = static_cast<Eigen::Index>(batch), cols = static_cast<Eigen::Index>(dims);
  std::vector<PosteriorBatch> out;
  std::vector<std::size_t> perm(batch);
  for (std::size_t c = 0; c < count; ++c) {
    PosteriorBatch b;
    b.mu.setZero(rows, cols);
    b.log_var.resize(rows, cols);
    b.z.resize(rows, cols);
    for (Eigen::Index d = 0; d < cols; ++d) {
      const double sigma = sigmas[static_cast<std::size_t>(d)];
      b.log_var.col(d).setConstant(2.0 * std::log(sigma));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      for (Eigen::Index m = 0; m < rows; ++m) b.z(m, d) = sigma * q[perm[static_cast<std::size_t>(m)]];
    }
    b.dataset_size = batch;
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace stcvae
