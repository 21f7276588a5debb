#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <random>

#include "stcvae/data.hpp"
#include "stcvae/metrics.hpp"

namespace stcvae::testing {

/// Latent code equal to the factor values of every sample.
inline Eigen::MatrixXd perfect_code(const FactorDataset& ds) {
  Eigen::MatrixXd z(ds.count, ds.factor_count());
  for (std::size_t i = 0; i < ds.count; ++i)
    for (std::size_t k = 0; k < ds.factor_count(); ++k) z(i, k) = ds.factor(i, k);
  return z;
}

/// Rows of `code` permuted, so latents no longer follow the factors.
inline Eigen::MatrixXd shuffled_rows(const Eigen::MatrixXd& code, std::uint64_t seed) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(code.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  Eigen::MatrixXd out(code.rows(), code.cols());
  for (Eigen::Index i = 0; i < code.rows(); ++i) out.row(i) = code.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

inline Eigen::MatrixXi all_factors(const FactorDataset& ds) {
  std::vector<std::size_t> idx(ds.count);
  std::iota(idx.begin(), idx.end(), 0);
  return factor_batch(ds, idx);
}

/// Encoder that looks rows up in a per-sample table.
inline EncodeFn table_encoder(const Eigen::MatrixXd& table) {
  return [table](std::span<const std::size_t> idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), table.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = table.row(static_cast<Eigen::Index>(idx[r]));
    return out;
  };
}

}  // namespace stcvae::testing
