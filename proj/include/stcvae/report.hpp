#pragma once

// Sweep report: trajectory scatter with fitted curves (SVG), collapsed-latent
// region table and the baseline-granularity line.

#include <optional>
#include <string>
#include <vector>

#include "stcvae/sweep.hpp"

namespace stcvae {

inline constexpr double kBaselineReference = 0.0892;

struct TrajectoryCurve {
  double beta = 0.0;
  std::vector<OptimalPoint> points;  // ascending capacity
  std::optional<QuadraticFit> fit;   // present with >= 3 capacities
};

struct SweepReport {
  std::vector<TrajectoryCurve> curves;
  std::vector<RegionCell> region;
  double baseline = 0.0;
  std::string svg;
  std::string region_table;
  std::string baseline_line;
  std::string fit_summary;
};

/// Deterministic in the records (same input -> byte-identical output).
SweepReport build_report(const std::vector<TrialRecord>& records, double region_threshold = 0.5);

}  // namespace stcvae
