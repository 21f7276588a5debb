#include "stcvae/verify.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "stcvae/estimators.hpp"
#include "stcvae/fixtures.hpp"
#include "stcvae/losses.hpp"
#include "stcvae/training.hpp"

namespace stcvae {

namespace {

constexpr double kExactTol = 1e-9;

void record(SuiteResult& r, bool ok, const std::string& what) {
  ++r.cases;
  if (ok) return;
  if (r.failures++ == 0) r.first_failure = what;
}

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::vector<GaussianSpec> random_specs(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GaussianSpec> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_pd_spec(2 + i % 15, rng));
  return out;
}

SuiteResult gaussian_identity(const std::vector<GaussianSpec>& specs) {
  SuiteResult r;
  r.name = "gaussian-identity";
  for (const auto& spec : specs) {
    const std::size_t n = spec.dim();
    const PairingLevels levels = pairing_levels(n);
    double sum = gaussian_residual_mi(spec, levels);
    for (std::size_t b = 1; b <= levels.depth; ++b) sum += gaussian_mu_level(spec, levels, b);
    const double err = std::abs(gaussian_tc(spec) - sum);
    record(r, err <= kExactTol,
           "TC != sum of level MI + residual (n=" + std::to_string(n) + ", err " + fmt("%.3g", err) + ")");
  }
  return r;
}

SuiteResult inference_one(const std::vector<GaussianSpec>& specs, const VerifyHooks& hooks) {
  SuiteResult r;
  r.name = "inference-1";
  for (const auto& spec : specs) {
    const std::size_t n = spec.dim();
    const double tc = gaussian_tc(spec);
    const PairingLevels levels = pairing_levels(n);
    for (std::size_t b : valid_grouping_factors(n)) {
      const LatentLayout layout = make_layout(n, b);
      const double g = hooks.grouped_tc(spec, layout);
      const std::string where = " (n=" + std::to_string(n) + ", b=" + std::to_string(b) + ")";
      record(r, g >= -1e-12, "grouped TC is negative" + where);
      record(r, g - tc <= 1e-12, "grouped TC exceeds full TC" + where);
      if (const auto k = peeled_levels(layout, levels)) {
        double peeled = 0.0;
        for (std::size_t lv = 1; lv <= *k; ++lv) peeled += gaussian_mu_level(spec, levels, lv);
        record(r, std::abs(tc - g - peeled) <= kExactTol, "full TC != grouped TC + peeled level MI" + where);
      }
    }
  }
  return r;
}

PosteriorBatch random_batch(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> lv(-2.0, 0.5);
  PosteriorBatch b;
  const auto rows = static_cast<Eigen::Index>(m), cols = static_cast<Eigen::Index>(n);
  b.mu.resize(rows, cols);
  b.log_var.resize(rows, cols);
  b.z.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index d = 0; d < cols; ++d) {
      b.mu(i, d) = normal(rng) + 0.5 * (d > 0 ? b.mu(i, d - 1) : 0.0);
      b.log_var(i, d) = lv(rng);
      b.z(i, d) = b.mu(i, d) + std::exp(0.5 * b.log_var(i, d)) * normal(rng);
    }
  b.dataset_size = m * 10;
  return b;
}

SuiteResult telescoping(std::size_t reps, std::uint64_t seed) {
  SuiteResult r;
  r.name = "telescoping";
  std::mt19937_64 rng(seed);
  for (std::size_t n : {2u, 4u, 5u, 8u, 12u}) {
    const PairingLevels levels = pairing_levels(n);
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const PosteriorBatch batch = random_batch(n, 64, rng);
      const DecompositionReport d = decomposition_report(batch, levels);
      double sum = d.residual;
      for (double v : d.mu_levels) sum += v;
      record(r, std::abs(d.tc_full - sum) <= kExactTol,
             "estimated TC != sum of level MI + residual (n=" + std::to_string(n) + ")");
      for (std::size_t b : valid_grouping_factors(n)) {
        const LatentLayout layout = make_layout(n, b);
        const auto k = peeled_levels(layout, levels);
        if (!k) continue;
        const InfoEstimate info = estimate_info(batch, layout, levels, 0.0);
        double peeled = 0.0;
        for (std::size_t lv = 0; lv < *k; ++lv) peeled += info.mu_levels[lv];
        record(r, std::abs(info.tc_full - info.tc_grouped - peeled) <= kExactTol,
               "estimated full TC != grouped TC + peeled level MI (n=" + std::to_string(n) + ", b=" +
                   std::to_string(b) + ")");
      }
    }
  }
  return r;
}

SuiteResult estimator_accuracy(bool quick, std::uint64_t seed) {
  SuiteResult r;
  r.name = "estimator-accuracy";
  const std::size_t m = quick ? 512 : 2048;
  const std::size_t seeds = quick ? 4 : 10;
  const double tol = quick ? 0.10 : 0.05;

  const GaussianSpec eq = equicorrelated(4, 0.5);
  const LatentLayout pairs = make_layout(4, 2);
  const double eq_full = gaussian_tc(eq), eq_grouped = gaussian_grouped_tc(eq, pairs);
  const Mixture2D mix = two_blob_mixture();
  const double mix_full = mixture_tc_quadrature(mix);

  double est_full = 0.0, est_grouped = 0.0, est_mix = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(seed * 1000 + s);
    MarginalEstimator e(equicorrelated_batch(4, 0.5, m, rng));
    est_full += e.block_tc({{0}, {1}, {2}, {3}});
    est_grouped += e.block_tc(pairs.groups);
    MarginalEstimator em(mixture_batch(mix, m, rng));
    est_mix += em.block_tc({{0}, {1}});
  }
  const double k = static_cast<double>(seeds);
  record(r, std::abs(est_full / k - eq_full) <= tol, fmt("equicorrelated full TC %.4f vs %.4f", est_full / k, eq_full));
  record(r, std::abs(est_grouped / k - eq_grouped) <= tol,
         fmt("equicorrelated grouped TC %.4f vs %.4f", est_grouped / k, eq_grouped));
  record(r, std::abs(est_mix / k - mix_full) <= tol, fmt("mixture TC %.4f vs %.4f", est_mix / k, mix_full));
  return r;
}

SuiteResult gradient_check(std::uint64_t seed) {
  SuiteResult r;
  r.name = "gradient-check";
  const ModelSpec spec{Arch::kMlp, ImageShape{6, 6, 1}, 4, 16, 1};
  std::mt19937_64 rng(seed + 17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  Mat<double> x(8, 36), noise(8, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = unit(rng);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);

  struct Case {
    LossKind kind;
    std::size_t b_hat;
  };
  for (const Case c : {Case{LossKind::kBetaStcvae, 2}, Case{LossKind::kBetaStcvae, 1}, Case{LossKind::kBetaTcvae, 1}}) {
    VaeModel<double> model(spec, seed + 3);
    const LossConfig cfg{4.0, 1.0, make_layout(4, c.b_hat)};
    const LossWithGradient loss = [&](std::span<const double> values, std::span<double> grad) {
      auto& store = model.params();
      std::copy(values.begin(), values.end(), store.values.begin());
      store.zero_grad();
      const StepResult s = loss_and_gradients(model, x, noise, c.kind, cfg, 80);
      if (!grad.empty()) std::copy(store.grads.begin(), store.grads.end(), grad.begin());
      return -s.objective;
    };
    GradCheckOptions gopt;
    gopt.region = [&](std::span<const double> values) {
      std::copy(values.begin(), values.end(), model.params().values.begin());
      return model.kink_pattern(x, noise);
    };
    const GradCheckReport rep = grad_check(loss, model.params().values, gopt);
    record(r, rep.ok() && rep.checked >= 150,
           std::string(c.kind == LossKind::kBetaTcvae ? "tcvae" : "stcvae") + " b=" + std::to_string(c.b_hat) +
               fmt(" gradient mismatch, max rel err %.3g", rep.max_rel_error));
  }
  return r;
}

}  // namespace

std::vector<SuiteResult> verify_oracles(const VerifyOptions& opt) {
  const auto specs = random_specs(opt.quick ? 50 : 200, opt.seed + 1);
  std::vector<SuiteResult> out;
  out.push_back(gaussian_identity(specs));
  out.push_back(inference_one(specs, opt.hooks));
  out.push_back(telescoping(opt.quick ? 2 : 5, opt.seed + 2));
  out.push_back(estimator_accuracy(opt.quick, opt.seed + 3));
  out.push_back(gradient_check(opt.seed + 4));
  return out;
}

std::string format_results(const std::vector<SuiteResult>& results) {
  std::ostringstream s;
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %-6s %8s %8s\n", "suite", "result", "cases", "failed");
  s << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-20s %-6s %8zu %8zu\n", r.name.c_str(), r.passed() ? "PASS" : "FAIL", r.cases,
                  r.failures);
    s << line;
    if (!r.passed()) s << "  first failure: " << r.first_failure << '\n';
  }
  return s.str();
}

}  // namespace stcvae
