#include "stcvae/losses.hpp"

#include <cmath>
#include <map>

#include "stcvae/errors.hpp"

namespace stcvae {

double loss_beta_tcvae(const InfoEstimate& info, const LossConfig& cfg) {
  return info.recon - cfg.alpha * info.index_code_mi - cfg.beta * info.tc_full - info.dimwise_kl;
}

double loss_beta_stcvae(const InfoEstimate& info, const LossConfig& cfg) {
  return info.recon - cfg.alpha * info.index_code_mi - cfg.beta * info.tc_grouped - info.dimwise_kl;
}

double loss_value(LossKind kind, const InfoEstimate& info, const LossConfig& cfg) {
  return kind == LossKind::kBetaTcvae ? loss_beta_tcvae(info, cfg) : loss_beta_stcvae(info, cfg);
}

LinearObjective penalty_objective(LossKind kind, const LossConfig& cfg) {
  const std::size_t n = cfg.layout.n;
  if (n < 2) throw InvalidLayout("loss layout is empty");
  Group all(n);
  for (std::size_t d = 0; d < n; ++d) all[d] = d;

  std::vector<Group> penalized;
  if (kind == LossKind::kBetaTcvae) {
    for (std::size_t d = 0; d < n; ++d) penalized.push_back({d});
  } else {
    penalized = cfg.layout.groups;
  }

  std::map<Group, double> coef;
  // alpha * (log q(z|x) - log q(z))
  coef[all] -= cfg.alpha;
  // beta * (log q(z) - sum_k log q(z_k))
  coef[all] += cfg.beta;
  for (const auto& g : penalized) coef[g] -= cfg.beta;
  // sum_d (log q(z_d) - log p(z_d))
  for (std::size_t d = 0; d < n; ++d) coef[{d}] += 1.0;

  LinearObjective obj;
  obj.conditional_coef = cfg.alpha;
  obj.prior_coef = -1.0;
  for (auto& [g, c] : coef) obj.marginal_terms.emplace_back(g, c);
  return obj;
}

template <typename S>
double analytic_kl(const Mat<S>& mu, const Mat<S>& log_var) {
  if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols()) throw ModelError("elbo: shape mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double m = mu.data()[i], lv = log_var.data()[i];
    acc += 0.5 * (std::exp(lv) + m * m - 1.0 - lv);
  }
  return acc / static_cast<double>(mu.rows());
}

template <typename S>
double elbo(double recon, const Mat<S>& mu, const Mat<S>& log_var) {
  return recon - analytic_kl(mu, log_var);
}

template double analytic_kl<float>(const Mat<float>&, const Mat<float>&);
template double analytic_kl<double>(const Mat<double>&, const Mat<double>&);
template double elbo<float>(double, const Mat<float>&, const Mat<float>&);
template double elbo<double>(double, const Mat<double>&, const Mat<double>&);

}  // namespace stcvae
