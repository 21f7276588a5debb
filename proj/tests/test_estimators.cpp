#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>

#include "stcvae/errors.hpp"
#include "stcvae/estimators.hpp"
#include "stcvae/fixtures.hpp"
#include "stcvae/oracle.hpp"

using namespace stcvae;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

PosteriorBatch random_batch(std::size_t m, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> lv(-1.5, 0.5);
  PosteriorBatch b;
  b.mu.resize(m, n);
  b.log_var.resize(m, n);
  b.z.resize(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t d = 0; d < n; ++d) {
      b.mu(i, d) = normal(rng);
      b.log_var(i, d) = lv(rng);
      b.z(i, d) = b.mu(i, d) + std::exp(0.5 * b.log_var(i, d)) * normal(rng);
    }
  b.dataset_size = 1000;
  return b;
}

// Direct O(M^2 n) evaluation of log q(z_{m,dims}) with no caching or vectorization.
double naive_log_marginal(const PosteriorBatch& b, const Group& dims, std::size_t m, double offset) {
  std::vector<double> terms;
  for (std::size_t j = 0; j < b.batch(); ++j) {
    double s = 0.0;
    for (std::size_t d : dims) {
      const double var = std::exp(b.log_var(j, d));
      const double r = b.z(m, d) - b.mu(j, d);
      s += -kHalfLog2Pi - 0.5 * b.log_var(j, d) - 0.5 * r * r / var;
    }
    terms.push_back(s);
  }
  double mx = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  return mx + std::log(acc) - offset;
}

}  // namespace

TEST_CASE("log density matrix") {
  SUBCASE("standard normal at its mean") {
    std::mt19937_64 rng(1);
    auto b = random_batch(5, 3, rng);
    b.log_var.setZero();
    b.z = b.mu;
    auto t = log_density_matrix(b);
    for (std::size_t m = 0; m < 5; ++m)
      for (std::size_t d = 0; d < 3; ++d) CHECK(t(m, m, d) == doctest::Approx(-0.91894).epsilon(1e-5));
  }
  SUBCASE("single sample") {
    std::mt19937_64 rng(2);
    auto b = random_batch(1, 4, rng);
    auto t = log_density_matrix(b);
    CHECK(t.batch() == 1);
    CHECK(t.dim() == 4);
    for (std::size_t d = 0; d < 4; ++d) {
      const double r = b.z(0, d) - b.mu(0, d);
      CHECK(t(0, 0, d) ==
            doctest::Approx(-kHalfLog2Pi - 0.5 * b.log_var(0, d) - 0.5 * r * r / std::exp(b.log_var(0, d))));
    }
  }
  SUBCASE("shift by k standard deviations") {
    PosteriorBatch b;
    b.mu = MatrixXdR::Constant(1, 1, 0.7);
    b.log_var = MatrixXdR::Constant(1, 1, std::log(2.25));
    b.z = b.mu;
    b.dataset_size = 1;
    const double base = log_density_matrix(b)(0, 0, 0);
    for (double k : {0.5, 1.0, 3.0}) {
      b.z(0, 0) = 0.7 + k * 1.5;
      CHECK(log_density_matrix(b)(0, 0, 0) - base == doctest::Approx(-k * k / 2).epsilon(1e-12));
    }
  }
  SUBCASE("invalid batches") {
    std::mt19937_64 rng(3);
    auto b = random_batch(4, 2, rng);
    b.z(1, 1) = std::nan("");
    CHECK_THROWS_AS(log_density_matrix(b), EstimatorDomainError);
    auto c = random_batch(4, 2, rng);
    c.dataset_size = 3;
    CHECK_THROWS_AS(validate(c), EstimatorDomainError);
    auto d = random_batch(4, 2, rng);
    d.log_var.resize(4, 3);
    CHECK_THROWS_AS(validate(d), EstimatorDomainError);
  }
}

TEST_CASE("minibatch log marginal") {
  std::mt19937_64 rng(5);
  SUBCASE("matches a naive evaluation") {
    auto b = random_batch(17, 5, rng);
    for (const Group& dims : {Group{0}, Group{1, 3}, Group{0, 1, 2, 3, 4}}) {
      auto v = mws_log_marginal(b, dims);
      auto w = mws_log_marginal(b, dims, MarginalNorm::kDatasetScaled);
      for (std::size_t m = 0; m < 17; ++m) {
        CHECK(v[m] == doctest::Approx(naive_log_marginal(b, dims, m, std::log(17.0))).epsilon(1e-12));
        CHECK(w[m] == doctest::Approx(naive_log_marginal(b, dims, m, std::log(17.0 * 1000.0))).epsilon(1e-12));
      }
    }
  }
  SUBCASE("one sample, one datum") {
    auto b = random_batch(1, 3, rng);
    b.dataset_size = 1;
    auto t = log_density_matrix(b);
    for (auto norm : {MarginalNorm::kBatchMixture, MarginalNorm::kDatasetScaled}) {
      CHECK(mws_log_marginal(b, {0, 2}, norm)[0] == doctest::Approx(t(0, 0, 0) + t(0, 0, 2)).epsilon(1e-14));
    }
  }
  SUBCASE("identical posteriors reduce to the shared density") {
    auto b = random_batch(6, 2, rng);
    for (std::size_t j = 1; j < 6; ++j) {
      b.mu.row(j) = b.mu.row(0);
      b.log_var.row(j) = b.log_var.row(0);
    }
    b.dataset_size = 6;
    auto t = log_density_matrix(b);
    auto v = mws_log_marginal(b, {0, 1});
    auto w = mws_log_marginal(b, {0, 1}, MarginalNorm::kDatasetScaled);
    for (std::size_t m = 0; m < 6; ++m) {
      CHECK(v[m] == doctest::Approx(t(m, 0, 0) + t(m, 0, 1)).epsilon(1e-12));
      CHECK(w[m] == doctest::Approx(t(m, 0, 0) + t(m, 0, 1) - std::log(6.0)).epsilon(1e-12));
    }
  }
  SUBCASE("joint equals sum of singletons when rows are constant in j") {
    auto b = random_batch(2, 2, rng);
    b.mu.row(1) = b.mu.row(0);
    b.log_var.row(1) = b.log_var.row(0);
    auto joint = mws_log_marginal(b, {0, 1});
    auto a = mws_log_marginal(b, {0});
    auto c = mws_log_marginal(b, {1});
    for (std::size_t m = 0; m < 2; ++m) CHECK(joint[m] == doctest::Approx(a[m] + c[m]).epsilon(1e-12));
  }
  SUBCASE("empty and out-of-range dims") {
    auto b = random_batch(3, 2, rng);
    CHECK_THROWS_AS(mws_log_marginal(b, {}), EstimatorDomainError);
    CHECK_THROWS_AS(mws_log_marginal(b, {2}), EstimatorDomainError);
  }
  SUBCASE("large magnitudes stay finite") {
    auto b = random_batch(8, 3, rng);
    b.mu *= 1e3;
    b.log_var.array() -= 20.0;
    auto v = mws_log_marginal(b, {0, 1, 2});
    CHECK(v.allFinite());
  }
}

TEST_CASE("estimate_info") {
  std::mt19937_64 rng(9);
  auto b = random_batch(32, 8, rng);
  auto levels = pairing_levels(8);

  SUBCASE("singleton layout reproduces the full TC exactly") {
    auto info = estimate_info(b, make_layout(8, 1), levels, -3.0);
    CHECK(info.tc_grouped == info.tc_full);
    CHECK(info.recon == -3.0);
  }
  SUBCASE("terms match their definitions") {
    auto info = estimate_info(b, make_layout(8, 2), levels, 0.0);
    auto all = mws_log_marginal(b, {0, 1, 2, 3, 4, 5, 6, 7});
    auto t = log_density_matrix(b);
    double mi = 0.0, tc = 0.0, tcg = 0.0, kl = 0.0;
    for (std::size_t m = 0; m < 32; ++m) {
      double cond = 0.0, singles = 0.0, blocks = 0.0, prior = 0.0;
      for (std::size_t d = 0; d < 8; ++d) {
        cond += t(m, m, d);
        singles += mws_log_marginal(b, {d})[m];
        prior += -kHalfLog2Pi - 0.5 * b.z(m, d) * b.z(m, d);
      }
      for (std::size_t k = 0; k < 4; ++k) blocks += mws_log_marginal(b, {2 * k, 2 * k + 1})[m];
      mi += cond - all[m];
      tc += all[m] - singles;
      tcg += all[m] - blocks;
      kl += singles - prior;
    }
    CHECK(info.index_code_mi == doctest::Approx(mi / 32).epsilon(1e-10));
    CHECK(info.tc_full == doctest::Approx(tc / 32).epsilon(1e-10));
    CHECK(info.tc_grouped == doctest::Approx(tcg / 32).epsilon(1e-10));
    CHECK(info.dimwise_kl == doctest::Approx(kl / 32).epsilon(1e-10));
    REQUIRE(info.mu_levels.size() == 2);
    // layout b=2 coincides with the first pairing level
    CHECK(std::abs(info.tc_full - info.tc_grouped - info.mu_levels[0]) <= 1e-9);
    CHECK(peeled_levels(make_layout(8, 2), levels) == std::optional<std::size_t>(1));
    CHECK(peeled_levels(make_layout(8, 4), levels) == std::optional<std::size_t>(2));
  }
  SUBCASE("row permutation leaves every estimate unchanged") {
    auto info = estimate_info(b, make_layout(8, 4), levels, 0.0);
    std::vector<int> perm(32);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PosteriorBatch p = b;
    for (int i = 0; i < 32; ++i) {
      p.mu.row(i) = b.mu.row(perm[i]);
      p.log_var.row(i) = b.log_var.row(perm[i]);
      p.z.row(i) = b.z.row(perm[i]);
    }
    auto q = estimate_info(p, make_layout(8, 4), levels, 0.0);
    CHECK(q.tc_full == doctest::Approx(info.tc_full).epsilon(1e-12));
    CHECK(q.tc_grouped == doctest::Approx(info.tc_grouped).epsilon(1e-12));
    CHECK(q.index_code_mi == doctest::Approx(info.index_code_mi).epsilon(1e-12));
    CHECK(q.dimwise_kl == doctest::Approx(info.dimwise_kl).epsilon(1e-12));
  }
  SUBCASE("layout mismatch") {
    CHECK_THROWS_AS(estimate_info(b, make_layout(4, 2), levels, 0.0), EstimatorDomainError);
  }
}

TEST_CASE("telescoping decomposition for n = 2..16") {
  std::mt19937_64 rng(21);
  for (std::size_t n = 2; n <= 16; ++n) {
    CAPTURE(n);
    auto b = random_batch(24, n, rng);
    auto levels = pairing_levels(n);
    auto rep = decomposition_report(b, levels);
    CHECK(rep.mu_levels.size() == levels.depth);
    double sum = rep.residual;
    for (double v : rep.mu_levels) sum += v;
    CHECK(std::abs(rep.tc_full - sum) <= 1e-9);
    if (n == 2) CHECK(rep.residual == doctest::Approx(rep.tc_full).epsilon(1e-14));
  }
}

TEST_CASE("accuracy against closed forms at M = 2048") {
  constexpr std::size_t kM = 2048;
  constexpr int kSeeds = 10;
  const auto levels4 = pairing_levels(4);
  const auto levels2 = pairing_levels(2);

  double full = 0.0, grouped = 0.0, mix = 0.0, indep = 0.0;
  const auto blobs = two_blob_mixture();
  for (int s = 0; s < kSeeds; ++s) {
    std::mt19937_64 rng(100 + s);
    auto eq = equicorrelated_batch(4, 0.5, kM, rng);
    auto info = estimate_info(eq, make_layout(4, 2), levels4, 0.0);
    full += info.tc_full / kSeeds;
    grouped += info.tc_grouped / kSeeds;
    mix += estimate_info(mixture_batch(blobs, kM, rng), make_layout(2, 1), levels2, 0.0).tc_full / kSeeds;

    PosteriorBatch ind;
    std::normal_distribution<double> normal;
    ind.mu.resize(kM, 3);
    ind.log_var = MatrixXdR::Constant(kM, 3, std::log(0.3));
    ind.z.resize(kM, 3);
    for (std::size_t i = 0; i < kM; ++i)
      for (int d = 0; d < 3; ++d) {
        ind.mu(i, d) = normal(rng);
        ind.z(i, d) = ind.mu(i, d) + std::sqrt(0.3) * normal(rng);
      }
    ind.dataset_size = kM;
    indep += estimate_info(ind, make_layout(3, 1), pairing_levels(3), 0.0).tc_full / kSeeds;
  }
  CHECK(std::abs(full - gaussian_tc(equicorrelated(4, 0.5))) <= 0.05);
  CHECK(std::abs(grouped - gaussian_grouped_tc(equicorrelated(4, 0.5), make_layout(4, 2))) <= 0.05);
  CHECK(std::abs(mix - mixture_tc_quadrature(blobs, 400)) <= 0.05);
  CHECK(std::abs(indep) <= 0.05);
  CHECK(grouped <= full + 0.05);
}

TEST_CASE("objective gradient matches finite differences") {
  std::mt19937_64 rng(33);
  auto b = random_batch(6, 4, rng);
  LinearObjective obj;
  obj.marginal_terms = {{{0, 1, 2, 3}, 1.7}, {{0}, -0.4}, {{1, 2}, 0.9}, {{3}, -1.3}};
  obj.conditional_coef = 0.6;
  obj.prior_coef = -0.8;

  for (auto norm : {MarginalNorm::kBatchMixture, MarginalNorm::kDatasetScaled}) {
    auto g = evaluate_with_gradient(b, obj, norm);
    auto value = [&](const PosteriorBatch& p) {
      MarginalEstimator est(p, norm);
      double v = 0.0;
      for (const auto& [dims, c] : obj.marginal_terms) v += c * est.log_marginal(dims).mean();
      v += obj.conditional_coef * est.log_conditional().mean() + obj.prior_coef * est.log_prior().mean();
      return v;
    };
    CHECK(g.value == doctest::Approx(value(b)).epsilon(1e-12));
    const double h = 1e-5;
    double worst = 0.0;
    for (int which = 0; which < 3; ++which) {
      for (Eigen::Index i = 0; i < 6; ++i)
        for (Eigen::Index d = 0; d < 4; ++d) {
          PosteriorBatch plus = b, minus = b;
          MatrixXdR* mp = which == 0 ? &plus.mu : which == 1 ? &plus.log_var : &plus.z;
          MatrixXdR* mm = which == 0 ? &minus.mu : which == 1 ? &minus.log_var : &minus.z;
          (*mp)(i, d) += h;
          (*mm)(i, d) -= h;
          const double fd = (value(plus) - value(minus)) / (2 * h);
          const MatrixXdR& an = which == 0 ? g.d_mu : which == 1 ? g.d_log_var : g.d_z;
          worst = std::max(worst, std::abs(fd - an(i, d)) / std::max(1e-6, std::abs(fd) + std::abs(an(i, d))));
        }
    }
    CHECK(worst <= 1e-6);
  }
}
