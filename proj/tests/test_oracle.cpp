#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "stcvae/errors.hpp"
#include "stcvae/oracle.hpp"

using namespace stcvae;

namespace {

const double kTwoPiE = 2.0 * std::numbers::pi * std::numbers::e;

GaussianSpec diag_spec(std::vector<double> vars) {
  GaussianSpec s;
  s.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vars.size()));
  s.cov = Eigen::MatrixXd::Zero(s.mean.size(), s.mean.size());
  for (std::size_t i = 0; i < vars.size(); ++i) s.cov(i, i) = vars[i];
  return s;
}

// log det via an explicit LU-free Gaussian elimination, independent of Eigen's Cholesky.
double elim_log_det(Eigen::MatrixXd a) {
  const auto n = a.rows();
  double ld = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    ld += std::log(a(k, k));
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (Eigen::Index j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return ld;
}

double sub_log_det(const Eigen::MatrixXd& cov, const Group& dims) {
  Eigen::MatrixXd s(dims.size(), dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i)
    for (std::size_t j = 0; j < dims.size(); ++j) s(i, j) = cov(dims[i], dims[j]);
  return elim_log_det(s);
}

double reference_block_tc(const Eigen::MatrixXd& cov, const std::vector<Group>& blocks) {
  Group all(cov.rows());
  for (std::size_t d = 0; d < all.size(); ++d) all[d] = d;
  double s = 0.0;
  for (const auto& b : blocks) s += sub_log_det(cov, b);
  return 0.5 * (s - sub_log_det(cov, all));
}

}  // namespace

TEST_CASE("Gaussian entropy closed forms") {
  CHECK(gaussian_entropy(diag_spec({1.0})) == doctest::Approx(0.5 * std::log(kTwoPiE)).epsilon(1e-12));
  CHECK(gaussian_entropy(diag_spec({1.0})) == doctest::Approx(1.41894).epsilon(1e-5));
  CHECK(gaussian_entropy(diag_spec({1.0, 1.0})) == doctest::Approx(2.83788).epsilon(1e-5));
  CHECK(std::abs(gaussian_entropy(diag_spec({1.0 / kTwoPiE}))) < 1e-12);
}

TEST_CASE("total correlation closed forms") {
  CHECK(gaussian_tc(diag_spec({0.3, 2.0, 5.0})) == doctest::Approx(0.0));
  CHECK(gaussian_tc(equicorrelated(2, 0.6)) == doctest::Approx(-0.5 * std::log(0.64)).epsilon(1e-12));
  CHECK(gaussian_tc(equicorrelated(2, 0.6)) == doctest::Approx(0.22314).epsilon(1e-4));
  CHECK(gaussian_tc(equicorrelated(4, 0.5)) == doctest::Approx(-0.5 * std::log(0.3125)).epsilon(1e-12));
  CHECK(gaussian_tc(equicorrelated(4, 0.5)) == doctest::Approx(0.58158).epsilon(1e-4));
}

TEST_CASE("grouped total correlation") {
  auto s = equicorrelated(4, 0.5);
  CHECK(gaussian_grouped_tc(s, make_layout(4, 1)) == doctest::Approx(gaussian_tc(s)).epsilon(1e-14));
  const double expect = 0.5 * (2.0 * std::log(0.75) - std::log(0.3125));
  CHECK(gaussian_grouped_tc(s, make_layout(4, 2)) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.29389).epsilon(1e-4));
  CHECK(gaussian_grouped_tc(diag_spec({1.0, 2.0, 3.0, 4.0}), make_layout(4, 2)) == doctest::Approx(0.0));
}

TEST_CASE("mutual information per level") {
  auto diag = diag_spec({1.0, 2.0, 3.0, 4.0});
  auto p4 = pairing_levels(4);
  CHECK(gaussian_mu_level(diag, p4, 1) == doctest::Approx(0.0));
  CHECK(gaussian_mu_level(diag, p4, 2) == doctest::Approx(0.0));

  auto s = equicorrelated(4, 0.5);
  CHECK(gaussian_mu_level(s, p4, 1) == doctest::Approx(2.0 * -0.5 * std::log(0.75)).epsilon(1e-12));
  CHECK(gaussian_mu_level(s, p4, 1) == doctest::Approx(0.28768).epsilon(1e-4));

  auto s2 = equicorrelated(2, 0.6);
  auto p2 = pairing_levels(2);
  CHECK(gaussian_mu_level(s2, p2, 1) == doctest::Approx(0.22314).epsilon(1e-4));
  CHECK(gaussian_residual_mi(s2, p2) == doctest::Approx(gaussian_tc(s2)).epsilon(1e-12));
  CHECK_THROWS_AS(gaussian_mu_level(s2, p2, 0), OracleDomainError);
  CHECK_THROWS_AS(gaussian_mu_level(s2, p2, 2), OracleDomainError);
}

TEST_CASE("oracles agree with an elimination-based reference") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 2 + rep % 11;
    auto s = random_pd_spec(n, rng);
    CAPTURE(n);
    Group all(n);
    for (std::size_t d = 0; d < n; ++d) all[d] = d;
    std::vector<Group> singles(n);
    for (std::size_t d = 0; d < n; ++d) singles[d] = {d};
    CHECK(gaussian_tc(s) == doctest::Approx(reference_block_tc(s.cov, singles)).epsilon(1e-9));
    CHECK(gaussian_entropy(s) ==
          doctest::Approx(0.5 * n * std::log(kTwoPiE) + 0.5 * sub_log_det(s.cov, all)).epsilon(1e-9));
    for (std::size_t b : valid_grouping_factors(n)) {
      auto l = make_layout(n, b);
      CHECK(gaussian_grouped_tc(s, l) == doctest::Approx(reference_block_tc(s.cov, l.groups)).epsilon(1e-9));
    }
  }
}

TEST_CASE("decomposition identity, inference 1 and telescoping on random specs") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 2 + rep % 15;
    auto s = random_pd_spec(n, rng);
    auto p = pairing_levels(n);
    const double tc = gaussian_tc(s);

    double sum = 0.0;
    for (std::size_t b = 1; b <= p.depth; ++b) {
      const double mu = gaussian_mu_level(s, p, b);
      CHECK(mu >= -1e-12);
      sum += mu;
      // grouped TC with the first b levels merged equals TC minus what was peeled.
      const double grouped = gaussian_block_tc(s, p.groups_after(b));
      CHECK(std::abs(grouped - (tc - sum)) <= 1e-9);
    }
    const double residual = gaussian_residual_mi(s, p);
    CHECK(residual >= -1e-12);
    CHECK(std::abs(tc - (sum + residual)) <= 1e-9);
    CHECK(gaussian_mu_level(s, p, p.depth + 1) == doctest::Approx(residual).epsilon(1e-12));

    for (std::size_t b : valid_grouping_factors(n)) {
      const double g = gaussian_grouped_tc(s, make_layout(n, b));
      CHECK(g >= -1e-12);
      CHECK(g <= tc + 1e-12);
    }
  }
}

TEST_CASE("invalid Gaussians") {
  GaussianSpec bad = diag_spec({1.0, 1.0});
  bad.cov(0, 1) = bad.cov(1, 0) = 2.0;
  CHECK_THROWS_AS(gaussian_tc(bad), OracleDomainError);
  GaussianSpec asym = diag_spec({1.0, 1.0});
  asym.cov(0, 1) = 0.3;
  CHECK_THROWS_AS(gaussian_entropy(asym), OracleDomainError);
  GaussianSpec wrong = diag_spec({1.0, 1.0});
  wrong.mean = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(validate(wrong), OracleDomainError);
  CHECK_THROWS_AS(gaussian_grouped_tc(equicorrelated(4, 0.2), make_layout(6, 2)), OracleDomainError);
}

TEST_CASE("brute-force discrete total correlation") {
  SUBCASE("product distribution") {
    DiscreteJoint j{{2, 3}, {}};
    const double pa[2] = {0.3, 0.7};
    const double pb[3] = {0.2, 0.5, 0.3};
    for (double a : pa)
      for (double b : pb) j.prob.push_back(a * b);
    CHECK(std::abs(brute_force_tc(j, make_layout(2, 1))) < 1e-12);
  }
  SUBCASE("two copied fair bits") {
    DiscreteJoint j{{2, 2}, {0.5, 0.0, 0.0, 0.5}};
    CHECK(brute_force_tc(j, make_layout(2, 1)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("correlated pair absorbed by a block") {
    // bits 0,1 copied; bits 2,3 independent fair coins
    DiscreteJoint j{{2, 2, 2, 2}, std::vector<double>(16, 0.0)};
    for (int a = 0; a < 2; ++a)
      for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) j.prob[static_cast<std::size_t>(a * 8 + a * 4 + c * 2 + d)] = 0.125;
    CHECK(std::abs(brute_force_tc(j, make_layout(4, 2))) < 1e-12);
    CHECK(brute_force_tc(j, make_layout(4, 1)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("unnormalized table") {
    DiscreteJoint j{{2, 2}, {0.5, 0.0, 0.0, 0.4}};
    CHECK_THROWS_AS(brute_force_tc(j, make_layout(2, 1)), OracleDomainError);
  }
}

TEST_CASE("mixture quadrature reduces to the Gaussian closed form") {
  Mixture2D one;
  one.weights = {1.0};
  one.means = {Eigen::Vector2d(0.3, -0.2)};
  Eigen::Matrix2d c;
  c << 1.0, 0.6, 0.6, 1.0;
  one.covs = {c};
  CHECK(mixture_tc_quadrature(one, 400) == doctest::Approx(-0.5 * std::log(1.0 - 0.36)).epsilon(1e-5));

  Mixture2D indep;
  indep.weights = {1.0};
  indep.means = {Eigen::Vector2d(0.0, 0.0)};
  indep.covs = {Eigen::Matrix2d::Identity()};
  CHECK(std::abs(mixture_tc_quadrature(indep, 200)) < 1e-8);
}
