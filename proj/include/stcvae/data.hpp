#pragma once

// Factor-annotated image datasets and the FVDS container.
//
// FVDS layout (little-endian):
//   "FVDS" | u32 version=1 | u32 N, H, W, C, K | K x u32 factor_sizes
//   | N*K x u32 factor values | N*H*W*C x u8 pixels

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stcvae/network.hpp"

namespace stcvae {

struct FactorDataset {
  std::string name;
  std::size_t count = 0;
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint32_t> factor_sizes;
  std::vector<std::uint32_t> factor_values;  // count x K, row-major
  std::vector<std::uint8_t> pixels;          // count x H x W x C

  std::size_t factor_count() const { return factor_sizes.size(); }
  std::size_t image_size() const { return height * width * channels; }
  ImageShape shape() const { return {height, width, channels}; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }
  std::uint32_t factor(std::size_t i, std::size_t k) const { return factor_values[i * factor_count() + k]; }

  /// Equality of everything stored in the container (name excluded).
  bool same_content(const FactorDataset& other) const;
};

/// Throws DataError if factor values fall outside their cardinalities or the
/// buffers disagree with the header counts.
void validate(const FactorDataset& ds);

/// Renders one white shape on black per factor combination. Factors, in order:
/// x-position, y-position, scale, shape (square, disc, cross), rotation,
/// intensity. The seed fixes the storage order of the complete grid.
FactorDataset generate_toy_factors(std::span<const std::uint32_t> factor_sizes, std::size_t image_size,
                                   std::uint64_t seed);

void write_fvds(const FactorDataset& ds, const std::filesystem::path& path);
FactorDataset read_fvds(const std::filesystem::path& path);

/// Images for the given indices as floats in [0, 1], one row per image.
Mat<float> image_batch(const FactorDataset& ds, std::span<const std::size_t> indices);

/// Factor values for the given indices, one row per sample.
Eigen::MatrixXi factor_batch(const FactorDataset& ds, std::span<const std::size_t> indices);

/// Epoch-shuffled index stream; identical sequences for identical seeds.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> pool_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

}  // namespace stcvae
