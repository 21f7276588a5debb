#include "stcvae/grouping.hpp"

#include <numeric>
#include <string>

#include "stcvae/errors.hpp"

namespace stcvae {

Group GroupPair::merged() const {
  Group out = left;
  out.insert(out.end(), right.begin(), right.end());
  return out;
}

std::vector<Group> PairingLevel::output_groups() const {
  std::vector<Group> out;
  out.reserve(pairs.size() + 1);
  for (const auto& p : pairs) out.push_back(p.merged());
  if (remainder) out.push_back(*remainder);
  return out;
}

std::vector<Group> PairingLevels::groups_after(std::size_t completed) const {
  if (completed > levels.size()) {
    throw InvalidLayout("pairing level " + std::to_string(completed) + " out of range");
  }
  if (completed == 0) {
    std::vector<Group> singles(n);
    for (std::size_t d = 0; d < n; ++d) singles[d] = {d};
    return singles;
  }
  return levels[completed - 1].output_groups();
}

std::vector<std::size_t> valid_grouping_factors(std::size_t n) {
  if (n < 2) {
    throw InvalidLayout("latent dimension count must be >= 2, got " + std::to_string(n));
  }
  std::vector<std::size_t> out;
  for (std::size_t b = 1; b < n; ++b) {
    if (n % b == 0) out.push_back(b);
  }
  return out;
}

LatentLayout make_layout(std::size_t n, std::size_t b_hat) {
  const auto factors = valid_grouping_factors(n);
  if (b_hat == 0 || n % b_hat != 0 || b_hat >= n) {
    throw InvalidLayout("grouping factor " + std::to_string(b_hat) +
                        " is not a proper divisor of n=" + std::to_string(n));
  }
  LatentLayout layout;
  layout.n = n;
  layout.b_hat = b_hat;
  layout.m = factors.back();
  layout.groups.resize(n / b_hat);
  for (std::size_t j = 0; j < layout.groups.size(); ++j) {
    auto& g = layout.groups[j];
    g.resize(b_hat);
    std::iota(g.begin(), g.end(), b_hat * j);
  }
  return layout;
}

std::optional<LatentLayout> layout_for_granularity(std::size_t n, Granularity g) {
  const auto factors = valid_grouping_factors(n);
  const std::size_t m = factors.back();
  // b/m == num/den  <=>  b*den == num*m
  for (std::size_t b : factors) {
    if (b * g.den == g.num * m) return make_layout(n, b);
  }
  return std::nullopt;
}

std::size_t decomposition_depth(std::size_t n) {
  if (n < 2) {
    throw InvalidLayout("latent dimension count must be >= 2, got " + std::to_string(n));
  }
  std::size_t ceil_log2 = 0;
  while ((std::size_t{1} << ceil_log2) < n) ++ceil_log2;
  return ceil_log2 - 1;
}

PairingLevels pairing_levels(std::size_t n) {
  PairingLevels out;
  out.n = n;
  out.depth = decomposition_depth(n);

  std::vector<Group> current = out.groups_after(0);
  while (current.size() > 1) {
    PairingLevel level;
    for (std::size_t i = 0; i + 1 < current.size(); i += 2) {
      level.pairs.push_back({current[i], current[i + 1]});
    }
    if (current.size() % 2 == 1) level.remainder = current.back();
    current = level.output_groups();
    out.levels.push_back(std::move(level));
  }
  return out;
}

}  // namespace stcvae
