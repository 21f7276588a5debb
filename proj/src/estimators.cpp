#include "stcvae/estimators.hpp"

#include <cmath>
#include <string>

#include "stcvae/errors.hpp"

namespace stcvae {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274;  // 0.5 * ln(2*pi)

// Row-wise max-shifted logsumexp; optionally also the matching softmax.
Eigen::VectorXd row_logsumexp(const MatrixXdR& a, MatrixXdR* softmax = nullptr) {
  Eigen::VectorXd out(a.rows());
  MatrixXdR scratch;
  MatrixXdR& e = softmax ? *softmax : scratch;
  e.resize(a.rows(), a.cols());
  for (Eigen::Index m = 0; m < a.rows(); ++m) {
    const double top = a.row(m).maxCoeff();
    if (!std::isfinite(top)) {
      out(m) = top;
      e.row(m).setConstant(1.0 / static_cast<double>(a.cols()));
      continue;
    }
    e.row(m) = (a.row(m).array() - top).exp().matrix();
    const double sum = e.row(m).sum();
    out(m) = top + std::log(sum);
    if (softmax) e.row(m) /= sum;
  }
  return out;
}

MatrixXdR summed_density(const LogDensityTensor& t, const Group& dims) {
  if (dims.empty()) throw EstimatorDomainError("dimension set is empty");
  MatrixXdR acc = MatrixXdR::Zero(static_cast<Eigen::Index>(t.batch()), static_cast<Eigen::Index>(t.batch()));
  for (auto d : dims) {
    if (d >= t.dim()) throw EstimatorDomainError("dimension " + std::to_string(d) + " out of range");
    acc += t.per_dim[d];
  }
  return acc;
}

double norm_offset(const PosteriorBatch& batch, MarginalNorm norm) {
  const double m = static_cast<double>(batch.batch());
  const double n = static_cast<double>(batch.dataset_size);
  return norm == MarginalNorm::kBatchMixture ? std::log(m) : std::log(n * m);
}

std::vector<Group> singletons(std::size_t n) {
  std::vector<Group> out(n);
  for (std::size_t d = 0; d < n; ++d) out[d] = {d};
  return out;
}

}  // namespace

void validate(const PosteriorBatch& batch) {
  if (batch.mu.rows() < 1 || batch.mu.cols() < 1) throw EstimatorDomainError("empty posterior batch");
  if (batch.log_var.rows() != batch.mu.rows() || batch.log_var.cols() != batch.mu.cols() ||
      batch.z.rows() != batch.mu.rows() || batch.z.cols() != batch.mu.cols()) {
    throw EstimatorDomainError("mu, log_var and z must share one M x n shape");
  }
  if (!batch.mu.allFinite() || !batch.log_var.allFinite() || !batch.z.allFinite()) {
    throw EstimatorDomainError("posterior batch has non-finite entries");
  }
  if (batch.dataset_size < batch.batch()) {
    throw EstimatorDomainError("dataset size " + std::to_string(batch.dataset_size) +
                               " smaller than batch size " + std::to_string(batch.batch()));
  }
}

LogDensityTensor log_density_matrix(const PosteriorBatch& batch) {
  validate(batch);
  const auto m_count = batch.mu.rows();
  const auto n = batch.mu.cols();
  LogDensityTensor t;
  t.per_dim.resize(static_cast<std::size_t>(n));
  for (Eigen::Index d = 0; d < n; ++d) {
    // Entry (m, j) is log q(z_{m,d} | x_j).
    const Eigen::ArrayXd mu = batch.mu.col(d);
    const Eigen::ArrayXd lv = batch.log_var.col(d);
    const Eigen::RowVectorXd mu_row = mu.matrix().transpose();
    const Eigen::RowVectorXd half_prec = (0.5 * (-lv).exp()).matrix().transpose();
    const Eigen::RowVectorXd base = (-kHalfLog2Pi - 0.5 * lv).matrix().transpose();
    auto& out = t.per_dim[static_cast<std::size_t>(d)];
    out.resize(m_count, m_count);
    for (Eigen::Index m = 0; m < m_count; ++m) {
      const double z = batch.z(m, d);
      out.row(m) = base.array() - (z - mu_row.array()).square() * half_prec.array();
    }
  }
  return t;
}

MarginalEstimator::MarginalEstimator(const PosteriorBatch& batch, MarginalNorm norm)
    : tensor_(log_density_matrix(batch)), offset_(norm_offset(batch, norm)) {
  const auto m_count = batch.mu.rows();
  log_conditional_ = Eigen::VectorXd::Zero(m_count);
  for (const auto& per : tensor_.per_dim) log_conditional_ += per.diagonal();
  log_prior_ = Eigen::VectorXd::Zero(m_count);
  for (Eigen::Index m = 0; m < m_count; ++m) {
    log_prior_(m) = -static_cast<double>(batch.dim()) * kHalfLog2Pi - 0.5 * batch.z.row(m).squaredNorm();
  }
}

const Eigen::VectorXd& MarginalEstimator::log_marginal(const Group& dims) {
  auto it = cache_.find(dims);
  if (it != cache_.end()) return it->second;
  Eigen::VectorXd v = row_logsumexp(summed_density(tensor_, dims)).array() - offset_;
  return cache_.emplace(dims, std::move(v)).first->second;
}

double MarginalEstimator::block_tc(const std::vector<Group>& blocks) {
  Group all(dim());
  for (std::size_t d = 0; d < all.size(); ++d) all[d] = d;
  Eigen::VectorXd acc = log_marginal(all);
  for (const auto& b : blocks) acc -= log_marginal(b);
  return acc.mean();
}

double MarginalEstimator::pair_mi(const Group& left, const Group& right) {
  Group both = left;
  both.insert(both.end(), right.begin(), right.end());
  return (log_marginal(both) - log_marginal(left) - log_marginal(right)).mean();
}

Eigen::VectorXd mws_log_marginal(const PosteriorBatch& batch, const Group& dims, MarginalNorm norm) {
  MarginalEstimator est(batch, norm);
  return est.log_marginal(dims);
}

InfoEstimate estimate_info(const PosteriorBatch& batch, const LatentLayout& layout,
                           const PairingLevels& levels, double recon_loglik, MarginalNorm norm) {
  validate(batch);
  if (layout.n != batch.dim() || levels.n != batch.dim()) {
    throw EstimatorDomainError("layout has n=" + std::to_string(layout.n) + " but batch has " +
                               std::to_string(batch.dim()) + " latent dimensions");
  }
  MarginalEstimator est(batch, norm);
  const std::size_t n = batch.dim();
  Group all(n);
  for (std::size_t d = 0; d < n; ++d) all[d] = d;

  InfoEstimate info;
  info.recon = recon_loglik;
  info.index_code_mi = (est.log_conditional() - est.log_marginal(all)).mean();
  info.tc_full = est.block_tc(singletons(n));
  info.tc_grouped = est.block_tc(layout.groups);

  for (std::size_t b = 0; b < levels.depth; ++b) {
    double acc = 0.0;
    for (const auto& p : levels.levels[b].pairs) acc += est.pair_mi(p.left, p.right);
    info.mu_levels.push_back(acc);
  }
  const auto& last = levels.levels.back().pairs.front();
  info.residual = est.pair_mi(last.left, last.right);

  Eigen::VectorXd marg_sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(batch.batch()));
  for (std::size_t d = 0; d < n; ++d) marg_sum += est.log_marginal({d});
  info.dimwise_kl = (marg_sum - est.log_prior()).mean();
  return info;
}

DecompositionReport decomposition_report(const PosteriorBatch& batch, const PairingLevels& levels,
                                         MarginalNorm norm) {
  validate(batch);
  if (levels.n != batch.dim()) throw EstimatorDomainError("pairing levels do not match the batch");
  MarginalEstimator est(batch, norm);
  DecompositionReport rep;
  rep.tc_full = est.block_tc(singletons(batch.dim()));
  for (std::size_t b = 0; b < levels.depth; ++b) {
    double acc = 0.0;
    for (const auto& p : levels.levels[b].pairs) acc += est.pair_mi(p.left, p.right);
    rep.mu_levels.push_back(acc);
  }
  const auto& last = levels.levels.back().pairs.front();
  rep.residual = est.pair_mi(last.left, last.right);
  return rep;
}

std::optional<std::size_t> peeled_levels(const LatentLayout& layout, const PairingLevels& levels) {
  for (std::size_t k = 0; k <= levels.levels.size(); ++k) {
    if (levels.groups_after(k) == layout.groups) return k;
  }
  return std::nullopt;
}

ObjectiveGradient evaluate_with_gradient(const PosteriorBatch& batch, const LinearObjective& objective,
                                         MarginalNorm norm) {
  MarginalEstimator est(batch, norm);
  const auto& t = est.tensor();
  const auto m_count = static_cast<Eigen::Index>(batch.batch());
  const auto n = batch.dim();
  const double inv_m = 1.0 / static_cast<double>(m_count);

  ObjectiveGradient out;
  // Upstream gradient of the objective w.r.t. each per-dimension log density.
  std::vector<MatrixXdR> upstream(n, MatrixXdR::Zero(m_count, m_count));

  for (const auto& [dims, coef] : objective.marginal_terms) {
    if (coef == 0.0) continue;
    MatrixXdR w;
    const Eigen::VectorXd lse = row_logsumexp(summed_density(t, dims), &w);
    out.value += coef * (lse.array() - est.offset()).mean();
    w *= coef * inv_m;
    for (auto d : dims) upstream[d] += w;
  }
  if (objective.conditional_coef != 0.0) {
    out.value += objective.conditional_coef * est.log_conditional().mean();
    for (auto& u : upstream) u.diagonal().array() += objective.conditional_coef * inv_m;
  }

  out.d_mu = MatrixXdR::Zero(m_count, static_cast<Eigen::Index>(n));
  out.d_log_var = MatrixXdR::Zero(m_count, static_cast<Eigen::Index>(n));
  out.d_z = MatrixXdR::Zero(m_count, static_cast<Eigen::Index>(n));

  if (objective.prior_coef != 0.0) {
    out.value += objective.prior_coef * est.log_prior().mean();
    out.d_z -= (objective.prior_coef * inv_m) * batch.z;
  }

  Eigen::RowVectorXd r(m_count), grp(m_count), col_mu(m_count), col_lv(m_count);
  for (std::size_t d = 0; d < n; ++d) {
    const auto di = static_cast<Eigen::Index>(d);
    const auto& g = upstream[d];
    const Eigen::RowVectorXd mu = batch.mu.col(di).transpose();
    const Eigen::RowVectorXd prec = (-batch.log_var.col(di).array()).exp().matrix().transpose();
    col_mu.setZero();
    col_lv.setZero();
    for (Eigen::Index m = 0; m < m_count; ++m) {
      r = (batch.z(m, di) - mu.array()).matrix();
      grp = (g.row(m).array() * r.array() * prec.array()).matrix();
      out.d_z(m, di) -= grp.sum();
      col_mu += grp;
      col_lv.array() += 0.5 * (grp.array() * r.array() - g.row(m).array());
    }
    out.d_mu.col(di) += col_mu.transpose();
    out.d_log_var.col(di) += col_lv.transpose();
  }
  return out;
}

}  // namespace stcvae
