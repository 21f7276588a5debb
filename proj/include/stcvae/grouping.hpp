#pragma once

// Latent grouping combinatorics.
//
// Dimensions are stored 0-based. A layout with grouping factor b splits the n
// latent dimensions into n/b contiguous blocks {b*j, ..., b*j + b - 1}; the
// granularity is b/m where m is the largest proper divisor of n.

#include <cstddef>
#include <optional>
#include <vector>

namespace stcvae {

using Group = std::vector<std::size_t>;

/// Exact rational b_hat / m, kept as an integer pair.
struct Granularity {
  std::size_t num = 1;
  std::size_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Granularity&, const Granularity&) = default;
};

struct LatentLayout {
  std::size_t n = 0;
  std::size_t b_hat = 0;
  std::size_t m = 0;
  std::vector<Group> groups;

  Granularity granularity() const { return {b_hat, m}; }
  std::size_t block_count() const { return groups.size(); }
};

struct GroupPair {
  Group left;
  Group right;

  Group merged() const;
};

struct PairingLevel {
  std::vector<GroupPair> pairs;
  std::optional<Group> remainder;

  /// Groups produced by this level: merged pairs in order, then the remainder.
  std::vector<Group> output_groups() const;
};

/// Bottom-up contiguous pairing of the n singleton dimensions. Level 0 pairs
/// singletons; every later level pairs the previous level's output. The last
/// level always holds exactly one pair (the residual mutual information), so
/// levels.size() == depth + 1.
struct PairingLevels {
  std::size_t n = 0;
  std::size_t depth = 0;
  std::vector<PairingLevel> levels;

  /// Groups in force after `completed` levels have been merged
  /// (0 -> singletons).
  std::vector<Group> groups_after(std::size_t completed) const;
};

/// Proper divisors of n in ascending order. Throws InvalidLayout for n < 2.
std::vector<std::size_t> valid_grouping_factors(std::size_t n);

/// Contiguous layout for grouping factor b_hat. Throws InvalidLayout if
/// b_hat is not a proper divisor of n.
LatentLayout make_layout(std::size_t n, std::size_t b_hat);

/// Layout whose granularity equals `g` exactly; empty if n has no such factor.
std::optional<LatentLayout> layout_for_granularity(std::size_t n, Granularity g);

/// ceil(log2 n) - 1, i.e. the number of mutual-information levels peeled off
/// before the final pair.
std::size_t decomposition_depth(std::size_t n);

PairingLevels pairing_levels(std::size_t n);

}  // namespace stcvae
