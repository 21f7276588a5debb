#include "stcvae/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "stcvae/errors.hpp"

namespace stcvae {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

double log_det_pd(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw OracleDomainError("covariance is not positive definite");
  }
  const auto& l = llt.matrixLLT();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

Eigen::MatrixXd sub_cov(const Eigen::MatrixXd& cov, const Group& dims) {
  const auto k = static_cast<Eigen::Index>(dims.size());
  Eigen::MatrixXd out(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      out(a, b) = cov(static_cast<Eigen::Index>(dims[a]), static_cast<Eigen::Index>(dims[b]));
    }
  }
  return out;
}

void check_partition(std::size_t n, std::span<const Group> blocks) {
  std::vector<int> seen(n, 0);
  for (const auto& b : blocks) {
    for (auto d : b) {
      if (d >= n || seen[d]++) throw OracleDomainError("blocks do not partition the dimensions");
    }
  }
  for (int s : seen) {
    if (s != 1) throw OracleDomainError("blocks do not partition the dimensions");
  }
}

// Trapezoid weights on a uniform grid.
double trap_weight(int i, int count) { return (i == 0 || i == count - 1) ? 0.5 : 1.0; }

}  // namespace

void validate(const GaussianSpec& spec) {
  const auto n = spec.mean.size();
  if (n < 1) throw OracleDomainError("Gaussian dimension must be >= 1");
  if (spec.cov.rows() != n || spec.cov.cols() != n) {
    throw OracleDomainError("covariance shape does not match mean length");
  }
  if (!spec.cov.isApprox(spec.cov.transpose(), 1e-12)) {
    throw OracleDomainError("covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(spec.cov);
  if (llt.info() != Eigen::Success) throw OracleDomainError("covariance is not positive definite");
}

double block_log_det(const GaussianSpec& spec, const Group& dims) {
  return log_det_pd(sub_cov(spec.cov, dims));
}

double gaussian_entropy(const GaussianSpec& spec) {
  validate(spec);
  const double n = static_cast<double>(spec.dim());
  return 0.5 * (n * (kLog2Pi + 1.0) + log_det_pd(spec.cov));
}

double gaussian_block_tc(const GaussianSpec& spec, std::span<const Group> blocks) {
  validate(spec);
  check_partition(spec.dim(), blocks);
  double acc = 0.0;
  for (const auto& b : blocks) acc += block_log_det(spec, b);
  return 0.5 * (acc - log_det_pd(spec.cov));
}

double gaussian_tc(const GaussianSpec& spec) {
  std::vector<Group> singles(spec.dim());
  for (std::size_t d = 0; d < singles.size(); ++d) singles[d] = {d};
  return gaussian_block_tc(spec, singles);
}

double gaussian_grouped_tc(const GaussianSpec& spec, const LatentLayout& layout) {
  if (layout.n != spec.dim()) {
    throw OracleDomainError("layout dimension does not match the Gaussian");
  }
  return gaussian_block_tc(spec, layout.groups);
}

double gaussian_mi(const GaussianSpec& spec, const Group& left, const Group& right) {
  Group both = left;
  both.insert(both.end(), right.begin(), right.end());
  return 0.5 * (block_log_det(spec, left) + block_log_det(spec, right) - block_log_det(spec, both));
}

double gaussian_mu_level(const GaussianSpec& spec, const PairingLevels& levels, std::size_t b) {
  validate(spec);
  if (levels.n != spec.dim()) throw OracleDomainError("pairing levels do not match the Gaussian");
  if (b < 1 || b > levels.levels.size()) {
    throw OracleDomainError("level " + std::to_string(b) + " outside 1.." +
                            std::to_string(levels.levels.size()));
  }
  double acc = 0.0;
  for (const auto& p : levels.levels[b - 1].pairs) acc += gaussian_mi(spec, p.left, p.right);
  return acc;
}

double gaussian_residual_mi(const GaussianSpec& spec, const PairingLevels& levels) {
  validate(spec);
  if (levels.n != spec.dim()) throw OracleDomainError("pairing levels do not match the Gaussian");
  const auto& last = levels.levels.back();
  return gaussian_mi(spec, last.pairs.front().left, last.pairs.front().right);
}

GaussianSpec equicorrelated(std::size_t n, double rho) {
  const auto k = static_cast<Eigen::Index>(n);
  GaussianSpec spec{Eigen::VectorXd::Zero(k), Eigen::MatrixXd::Constant(k, k, rho)};
  spec.cov.diagonal().setOnes();
  return spec;
}

GaussianSpec random_pd_spec(std::size_t n, std::mt19937_64& rng) {
  const auto k = static_cast<Eigen::Index>(n);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) a(i, j) = normal(rng);
  GaussianSpec spec;
  spec.mean = Eigen::VectorXd::Zero(k);
  spec.cov = a.transpose() * a + static_cast<double>(n) * 1e-3 * Eigen::MatrixXd::Identity(k, k);
  spec.cov = 0.5 * (spec.cov + spec.cov.transpose());
  return spec;
}

double brute_force_tc(const DiscreteJoint& joint, std::span<const Group> blocks) {
  const std::size_t n = joint.alphabet.size();
  std::size_t total = 1;
  for (auto a : joint.alphabet) {
    if (a == 0) throw OracleDomainError("alphabet size must be >= 1");
    total *= a;
  }
  if (joint.prob.size() != total) throw OracleDomainError("probability table has wrong size");
  double sum = 0.0;
  for (double p : joint.prob) {
    if (p < 0.0) throw OracleDomainError("negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw OracleDomainError("probability table is not normalized");
  check_partition(n, blocks);

  // Row-major strides; last variable fastest.
  std::vector<std::size_t> stride(n, 1);
  for (std::size_t d = n; d-- > 1;) stride[d - 1] = stride[d] * joint.alphabet[d];

  auto digit = [&](std::size_t flat, std::size_t d) { return (flat / stride[d]) % joint.alphabet[d]; };

  // Block marginals indexed by the block's own mixed-radix code.
  std::vector<std::vector<double>> marg(blocks.size());
  auto block_code = [&](std::size_t flat, const Group& b) {
    std::size_t code = 0;
    for (auto d : b) code = code * joint.alphabet[d] + digit(flat, d);
    return code;
  };
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    std::size_t size = 1;
    for (auto d : blocks[k]) size *= joint.alphabet[d];
    marg[k].assign(size, 0.0);
    for (std::size_t f = 0; f < total; ++f) marg[k][block_code(f, blocks[k])] += joint.prob[f];
  }

  double tc = 0.0;
  for (std::size_t f = 0; f < total; ++f) {
    const double p = joint.prob[f];
    if (p <= 0.0) continue;
    double log_prod = 0.0;
    for (std::size_t k = 0; k < blocks.size(); ++k) log_prod += std::log(marg[k][block_code(f, blocks[k])]);
    tc += p * (std::log(p) - log_prod);
  }
  return tc;
}

double brute_force_tc(const DiscreteJoint& joint, const LatentLayout& layout) {
  if (layout.n != joint.alphabet.size()) throw OracleDomainError("layout does not match the table");
  return brute_force_tc(joint, layout.groups);
}

double Mixture2D::log_density(const Eigen::Vector2d& z) const {
  double best = -INFINITY;
  std::vector<double> terms(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const Eigen::Vector2d r = z - means[k];
    const double det = covs[k].determinant();
    const double quad = r.dot(covs[k].inverse() * r);
    terms[k] = std::log(weights[k]) - kLog2Pi - 0.5 * std::log(det) - 0.5 * quad;
    best = std::max(best, terms[k]);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

double Mixture2D::marginal_log_density(int axis, double x) const {
  double best = -INFINITY;
  std::vector<double> terms(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double var = covs[k](axis, axis);
    const double r = x - means[k](axis);
    terms[k] = std::log(weights[k]) - 0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;
    best = std::max(best, terms[k]);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - best);
  return best + std::log(s);
}

double mixture_tc_quadrature(const Mixture2D& mix, int grid) {
  if (mix.weights.empty() || mix.means.size() != mix.weights.size() ||
      mix.covs.size() != mix.weights.size()) {
    throw OracleDomainError("malformed mixture");
  }
  if (grid < 3) throw OracleDomainError("quadrature grid too small");

  std::array<double, 2> lo{}, step{};
  for (int axis = 0; axis < 2; ++axis) {
    double mean = 0.0, second = 0.0;
    for (std::size_t k = 0; k < mix.weights.size(); ++k) {
      const double mk = mix.means[k](axis);
      mean += mix.weights[k] * mk;
      second += mix.weights[k] * (mix.covs[k](axis, axis) + mk * mk);
    }
    const double sd = std::sqrt(second - mean * mean);
    lo[axis] = mean - 8.0 * sd;
    step[axis] = 16.0 * sd / (grid - 1);
  }

  // H(z1) + H(z2) - H(z1, z2), each as -int q log q.
  double joint = 0.0;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const Eigen::Vector2d z(lo[0] + i * step[0], lo[1] + j * step[1]);
      const double lq = mix.log_density(z);
      joint -= trap_weight(i, grid) * trap_weight(j, grid) * std::exp(lq) * lq;
    }
  }
  joint *= step[0] * step[1];

  double marginals = 0.0;
  for (int axis = 0; axis < 2; ++axis) {
    double h = 0.0;
    for (int i = 0; i < grid; ++i) {
      const double lq = mix.marginal_log_density(axis, lo[axis] + i * step[axis]);
      h -= trap_weight(i, grid) * std::exp(lq) * lq;
    }
    marginals += h * step[axis];
  }
  return marginals - joint;
}

}  // namespace stcvae
