#pragma once

// Training objectives (maximized) assembled from estimator outputs, and the
// unweighted ELBO used to compare models across beta and granularity.

#include "stcvae/estimators.hpp"
#include "stcvae/grouping.hpp"
#include "stcvae/network.hpp"

namespace stcvae {

enum class LossKind { kBetaTcvae, kBetaStcvae };

struct LossConfig {
  double beta = 1.0;
  double alpha = 1.0;  // weight on the index-code mutual information
  LatentLayout layout;
};

/// recon - alpha * I(z;x) - beta * TC(z) - sum_d KL(q(z_d) || p(z_d))
double loss_beta_tcvae(const InfoEstimate& info, const LossConfig& cfg);

/// Same with the grouped total correlation in place of TC(z).
double loss_beta_stcvae(const InfoEstimate& info, const LossConfig& cfg);

double loss_value(LossKind kind, const InfoEstimate& info, const LossConfig& cfg);

/// The penalty (everything except recon) as a LinearObjective, so its gradient
/// w.r.t. mu, log_var and z can be evaluated. objective = recon - penalty.
LinearObjective penalty_objective(LossKind kind, const LossConfig& cfg);

/// recon - mean_m sum_d KL(N(mu, exp(log_var)) || N(0, 1)).
template <typename S>
double elbo(double recon, const Mat<S>& mu, const Mat<S>& log_var);

template <typename S>
double analytic_kl(const Mat<S>& mu, const Mat<S>& log_var);

}  // namespace stcvae
