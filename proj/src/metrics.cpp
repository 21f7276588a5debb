#include "stcvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "stcvae/errors.hpp"

namespace stcvae {
namespace {

std::vector<int> column_labels(const Eigen::MatrixXi& m, Eigen::Index col) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, col);
  return out;
}

// Top minus runner-up of a score list (runner-up 0 when there is one entry).
double top_gap(std::vector<double> scores) {
  std::sort(scores.begin(), scores.end(), std::greater<>());
  if (scores.empty()) return 0.0;
  return scores[0] - (scores.size() > 1 ? scores[1] : 0.0);
}

}  // namespace

std::size_t MetricScores::omniscient_count() const {
  return static_cast<std::size_t>(std::count(omniscient_flags.begin(), omniscient_flags.end(), true));
}

std::vector<int> equal_occupancy_bins(const Eigen::VectorXd& column, std::size_t bins) {
  const std::size_t s = static_cast<std::size_t>(column.size());
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return column(static_cast<Eigen::Index>(a)) < column(static_cast<Eigen::Index>(b)); });
  std::vector<int> out(s);
  std::size_t first_rank = 0;
  for (std::size_t r = 0; r < s; ++r) {
    if (r > 0 && column(static_cast<Eigen::Index>(order[r])) != column(static_cast<Eigen::Index>(order[r - 1]))) {
      first_rank = r;
    }
    out[order[r]] = static_cast<int>(first_rank * bins / s);
  }
  return out;
}

double discrete_entropy(std::span<const int> a) {
  std::map<int, std::size_t> counts;
  for (int v : a) ++counts[v];
  const double n = static_cast<double>(a.size());
  double h = 0.0;
  for (const auto& [v, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double discrete_mi(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw MetricError("label vectors differ in length");
  std::map<int, std::size_t> ca, cb;
  std::map<std::pair<int, int>, std::size_t> cab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    ++cab[{a[i], b[i]}];
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (const auto& [key, c] : cab) {
    const double pab = static_cast<double>(c) / n;
    const double pa = static_cast<double>(ca[key.first]) / n;
    const double pb = static_cast<double>(cb[key.second]) / n;
    mi += pab * std::log(pab / (pa * pb));
  }
  return std::max(mi, 0.0);
}

double mig(const Eigen::MatrixXd& latents, const Eigen::MatrixXi& factors) {
  if (latents.rows() != factors.rows() || latents.rows() < 1) {
    throw MetricError("latents and factors must have the same positive row count");
  }
  std::vector<std::vector<int>> binned;
  for (Eigen::Index d = 0; d < latents.cols(); ++d) binned.push_back(equal_occupancy_bins(latents.col(d), kMigBins));

  double acc = 0.0;
  std::size_t used = 0;
  for (Eigen::Index k = 0; k < factors.cols(); ++k) {
    const auto labels = column_labels(factors, k);
    const double h = discrete_entropy(labels);
    if (h <= 0.0) continue;
    std::vector<double> mis;
    for (const auto& b : binned) mis.push_back(discrete_mi(b, labels));
    acc += top_gap(mis) / h;
    ++used;
  }
  if (used == 0) return 0.0;
  return std::clamp(acc / static_cast<double>(used), 0.0, 1.0);
}

double sap(const Eigen::MatrixXd& latents, const Eigen::MatrixXi& factors) {
  if (latents.rows() != factors.rows() || latents.rows() < 2) {
    throw MetricError("latents and factors must have the same row count (>= 2)");
  }
  const Eigen::MatrixXd f = factors.cast<double>();
  const Eigen::MatrixXd zc = latents.rowwise() - latents.colwise().mean();
  const Eigen::MatrixXd fc = f.rowwise() - f.colwise().mean();
  const Eigen::VectorXd zvar = zc.colwise().squaredNorm();
  const Eigen::VectorXd fvar = fc.colwise().squaredNorm();
  const Eigen::MatrixXd cov = zc.transpose() * fc;  // n x K

  double acc = 0.0;
  for (Eigen::Index k = 0; k < f.cols(); ++k) {
    std::vector<double> r2;
    for (Eigen::Index d = 0; d < latents.cols(); ++d) {
      const double denom = zvar(d) * fvar(k);
      r2.push_back(denom > 0.0 ? cov(d, k) * cov(d, k) / denom : 0.0);
    }
    acc += top_gap(r2);
  }
  return std::clamp(acc / static_cast<double>(f.cols()), 0.0, 1.0);
}

double factor_vae_score(const EncodeFn& encode, const FactorDataset& ds, std::uint64_t seed,
                        const FactorScoreOptions& opt) {
  const std::size_t k_count = ds.factor_count();
  if (k_count == 0 || ds.count < 2) throw MetricError("factor score needs a dataset with factors");
  for (auto s : ds.factor_sizes) {
    if (s < 2) throw MetricError("factor score needs every factor to take at least two values");
  }
  if (opt.votes == 0 || opt.eval_votes == 0 || opt.batch < 2) throw MetricError("factor score options out of range");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_sample(0, ds.count - 1);
  std::uniform_int_distribution<std::size_t> pick_factor(0, k_count - 1);

  // Indices grouped by (factor, value).
  std::vector<std::vector<std::vector<std::size_t>>> by_value(k_count);
  for (std::size_t k = 0; k < k_count; ++k) by_value[k].resize(ds.factor_sizes[k]);
  for (std::size_t i = 0; i < ds.count; ++i) {
    for (std::size_t k = 0; k < k_count; ++k) by_value[k][ds.factor(i, k)].push_back(i);
  }

  std::vector<std::size_t> global(std::min(opt.std_samples, ds.count));
  for (auto& g : global) g = pick_sample(rng);
  const Eigen::MatrixXd zg = encode(global);
  const Eigen::RowVectorXd mean = zg.colwise().mean();
  const Eigen::RowVectorXd sd = ((zg.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(zg.rows())).cwiseSqrt();
  const auto n = zg.cols();

  auto episode = [&]() -> std::pair<Eigen::Index, std::size_t> {
    const std::size_t k = pick_factor(rng);
    const auto& pool = by_value[k][ds.factor(pick_sample(rng), k)];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<std::size_t> idx(opt.batch);
    for (auto& i : idx) i = pool[pick(rng)];
    const Eigen::MatrixXd z = encode(idx);
    Eigen::Index best = -1;
    double best_var = INFINITY;
    for (Eigen::Index d = 0; d < n; ++d) {
      if (!(sd(d) > 0.0)) continue;  // collapsed dimensions cannot vote
      const Eigen::VectorXd col = z.col(d) / sd(d);
      const double var = (col.array() - col.mean()).square().sum() / static_cast<double>(col.size());
      if (var < best_var) {
        best_var = var;
        best = d;
      }
    }
    return {best, k};
  };

  Eigen::MatrixXi votes = Eigen::MatrixXi::Zero(n, static_cast<Eigen::Index>(k_count));
  for (std::size_t e = 0; e < opt.votes; ++e) {
    const auto [d, k] = episode();
    if (d >= 0) ++votes(d, static_cast<Eigen::Index>(k));
  }
  std::vector<std::size_t> predict(static_cast<std::size_t>(n));
  for (Eigen::Index d = 0; d < n; ++d) {
    Eigen::Index arg = 0;
    votes.row(d).maxCoeff(&arg);
    predict[static_cast<std::size_t>(d)] = static_cast<std::size_t>(arg);
  }

  std::size_t correct = 0;
  for (std::size_t e = 0; e < opt.eval_votes; ++e) {
    const auto [d, k] = episode();
    if (d >= 0 && predict[static_cast<std::size_t>(d)] == k) ++correct;
  }
  return std::clamp(static_cast<double>(correct) / static_cast<double>(opt.eval_votes), 0.0, 1.0);
}

OmniscientReport omniscient_flags(std::span<const PosteriorBatch> batches, double epsilon, double delta) {
  if (!(epsilon > 0.0)) throw MetricError("epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw MetricError("delta must lie in (0, 1)");
  if (batches.size() < 10) {
    throw MetricError("need at least 10 evaluation batches, got " + std::to_string(batches.size()));
  }
  const std::size_t n = batches.front().dim();
  OmniscientReport rep;
  rep.mean_entropy.assign(n, 0.0);
  rep.below_fraction.assign(n, 0.0);
  for (const auto& b : batches) {
    if (b.dim() != n) throw MetricError("evaluation batches disagree on latent dimension");
    MarginalEstimator est(b);
    for (std::size_t d = 0; d < n; ++d) {
      const double h = -est.log_marginal({d}).mean();
      rep.mean_entropy[d] += h;
      if (h < epsilon) rep.below_fraction[d] += 1.0;
    }
  }
  const double count = static_cast<double>(batches.size());
  rep.flags.resize(n);
  for (std::size_t d = 0; d < n; ++d) {
    rep.mean_entropy[d] /= count;
    rep.below_fraction[d] /= count;
    rep.flags[d] = rep.below_fraction[d] >= 1.0 - delta;
  }
  return rep;
}

}  // namespace stcvae
