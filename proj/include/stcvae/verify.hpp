#pragma once

// Self-check suites run by `stcvae verify-oracles`.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stcvae/grouping.hpp"
#include "stcvae/oracle.hpp"

namespace stcvae {

/// Replaceable pieces, so a deliberately broken implementation can be shown
/// to fail the suites.
struct VerifyHooks {
  std::function<double(const GaussianSpec&, const LatentLayout&)> grouped_tc = gaussian_grouped_tc;
};

/// Sample-size schedule. Quick mode shrinks the statistical suite from
/// M = 2048 x 10 seeds to M = 512 x 4 seeds and doubles its tolerance
/// (0.05 -> 0.10, the standard error grows by about sqrt(4)); the exact
/// suites only see fewer random cases.
struct VerifyOptions {
  bool quick = false;
  std::uint64_t seed = 0;
  VerifyHooks hooks;
};

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::string first_failure;  // names the violated invariant

  bool passed() const { return failures == 0; }
};

std::vector<SuiteResult> verify_oracles(const VerifyOptions& opt = {});

/// Pass/fail table, one line per suite.
std::string format_results(const std::vector<SuiteResult>& results);

}  // namespace stcvae
