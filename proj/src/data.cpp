#include "stcvae/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "stcvae/errors.hpp"

namespace stcvae {
namespace {

struct RenderParams {
  double cx = 0.5, cy = 0.5;  // fraction of the usable range
  double scale = 0.5;         // 0..1
  int shape = 0;              // 0 square, 1 disc, 2 cross
  double angle = 0.0;         // radians
  double intensity = 1.0;     // 0..1
};

double fraction(std::uint32_t value, std::uint32_t size) {
  return size <= 1 ? 0.5 : static_cast<double>(value) / static_cast<double>(size - 1);
}

void render(const RenderParams& p, std::size_t size, std::uint8_t* out) {
  const double s = static_cast<double>(size);
  const double half = s * (0.09 + 0.09 * p.scale);  // half extent of the shape
  const double margin = s * 0.18 + 1.0;
  const double cx = margin + p.cx * (s - 2.0 * margin);
  const double cy = margin + p.cy * (s - 2.0 * margin);
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  const auto value = static_cast<std::uint8_t>(std::lround(255.0 * (0.4 + 0.6 * p.intensity)));

  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double u = ca * dx + sa * dy;
      const double v = -sa * dx + ca * dy;
      bool inside = false;
      switch (p.shape) {
        case 0:
          inside = std::abs(u) <= half && std::abs(v) <= half;
          break;
        case 1:
          inside = u * u + v * v <= half * half;
          break;
        default: {
          const double arm = half * 0.4;
          inside = (std::abs(u) <= half && std::abs(v) <= arm) || (std::abs(v) <= half && std::abs(u) <= arm);
          break;
        }
      }
      out[y * size + x] = inside ? value : 0;
    }
  }
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32(const std::string& field) {
    if (pos_ + 4 > bytes_.size()) {
      throw FormatError("FVDS truncated reading " + field + " at offset " + std::to_string(pos_));
    }
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 4;
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const char* here() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool FactorDataset::same_content(const FactorDataset& o) const {
  return count == o.count && height == o.height && width == o.width && channels == o.channels &&
         factor_sizes == o.factor_sizes && factor_values == o.factor_values && pixels == o.pixels;
}

void validate(const FactorDataset& ds) {
  const std::size_t k = ds.factor_count();
  if (ds.factor_values.size() != ds.count * k) throw DataError("factor table size does not match N x K");
  if (ds.pixels.size() != ds.count * ds.image_size()) throw DataError("pixel buffer size does not match N x H x W x C");
  for (std::size_t i = 0; i < ds.count; ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      if (ds.factor(i, f) >= ds.factor_sizes[f]) {
        throw DataError("factor " + std::to_string(f) + " of sample " + std::to_string(i) + " out of range");
      }
    }
  }
}

FactorDataset generate_toy_factors(std::span<const std::uint32_t> factor_sizes, std::size_t image_size,
                                   std::uint64_t seed) {
  if (factor_sizes.empty() || factor_sizes.size() > 6) throw DataError("toy dataset supports 1..6 factors");
  if (image_size != 32 && image_size != 64) throw DataError("toy image size must be 32 or 64");
  std::size_t total = 1;
  for (auto s : factor_sizes) {
    if (s == 0) throw DataError("factor cardinality must be positive");
    total *= s;
    if (total > 50000) throw DataError("factor grid exceeds 50000 combinations");
  }
  if (factor_sizes.size() > 3 && factor_sizes[3] > 3) throw DataError("shape factor has at most 3 values");

  FactorDataset ds;
  ds.name = "toy";
  ds.count = total;
  ds.height = ds.width = image_size;
  ds.channels = 1;
  ds.factor_sizes.assign(factor_sizes.begin(), factor_sizes.end());

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t k = factor_sizes.size();
  ds.factor_values.resize(total * k);
  ds.pixels.resize(total * ds.image_size());
  for (std::size_t slot = 0; slot < total; ++slot) {
    // Decode the grid cell (last factor fastest).
    std::size_t cell = order[slot];
    std::vector<std::uint32_t> v(k);
    for (std::size_t f = k; f-- > 0;) {
      v[f] = static_cast<std::uint32_t>(cell % factor_sizes[f]);
      cell /= factor_sizes[f];
    }
    std::copy(v.begin(), v.end(), ds.factor_values.begin() + static_cast<std::ptrdiff_t>(slot * k));

    RenderParams p;
    if (k > 0) p.cx = fraction(v[0], factor_sizes[0]);
    if (k > 1) p.cy = fraction(v[1], factor_sizes[1]);
    if (k > 2) p.scale = fraction(v[2], factor_sizes[2]);
    if (k > 3) p.shape = static_cast<int>(v[3]);
    if (k > 4) p.angle = 0.5 * std::numbers::pi * static_cast<double>(v[4]) / static_cast<double>(factor_sizes[4]);
    if (k > 5) p.intensity = fraction(v[5], factor_sizes[5]);
    render(p, image_size, ds.pixels.data() + slot * ds.image_size());
  }
  return ds;
}

void write_fvds(const FactorDataset& ds, const std::filesystem::path& path) {
  validate(ds);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write("FVDS", 4);
  put_u32(out, 1);
  for (std::size_t v : {ds.count, ds.height, ds.width, ds.channels, ds.factor_count()}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  for (auto s : ds.factor_sizes) put_u32(out, s);
  for (auto v : ds.factor_values) put_u32(out, v);
  out.write(reinterpret_cast<const char*>(ds.pixels.data()), static_cast<std::streamsize>(ds.pixels.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

FactorDataset read_fvds(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  if (r.remaining() < 4 || std::string(r.here(), 4) != "FVDS") throw FormatError("FVDS bad magic at offset 0");
  r.skip(4);
  const auto version = r.u32("version");
  if (version != 1) throw FormatError("FVDS unsupported version " + std::to_string(version) + " at offset 4");

  FactorDataset ds;
  ds.name = path.stem().string();
  ds.count = r.u32("N");
  ds.height = r.u32("H");
  ds.width = r.u32("W");
  ds.channels = r.u32("C");
  const std::size_t k = r.u32("K");
  for (std::size_t f = 0; f < k; ++f) ds.factor_sizes.push_back(r.u32("factor_sizes[" + std::to_string(f) + "]"));

  const std::size_t value_count = ds.count * k;
  if (r.remaining() / 4 < value_count) throw FormatError("FVDS factor values short");
  ds.factor_values.reserve(value_count);
  for (std::size_t i = 0; i < value_count; ++i) ds.factor_values.push_back(r.u32("factor value"));

  const std::size_t pixel_count = ds.count * ds.image_size();
  if (r.remaining() < pixel_count) throw FormatError("FVDS pixel payload short");
  ds.pixels.assign(reinterpret_cast<const std::uint8_t*>(r.here()),
                   reinterpret_cast<const std::uint8_t*>(r.here()) + pixel_count);
  r.skip(pixel_count);
  if (r.remaining() != 0) throw FormatError("FVDS trailing bytes after pixel payload");
  try {
    validate(ds);
  } catch (const DataError& e) {
    throw FormatError(std::string("FVDS ") + e.what());
  }
  return ds;
}

Mat<float> image_batch(const FactorDataset& ds, std::span<const std::size_t> indices) {
  Mat<float> x(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(ds.image_size()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto img = ds.image(indices[r]);
    for (std::size_t p = 0; p < img.size(); ++p) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p)) = static_cast<float>(img[p]) / 255.0f;
    }
  }
  return x;
}

Eigen::MatrixXi factor_batch(const FactorDataset& ds, std::span<const std::size_t> indices) {
  Eigen::MatrixXi f(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(ds.factor_count()));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    for (std::size_t k = 0; k < ds.factor_count(); ++k) {
      f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = static_cast<int>(ds.factor(indices[r], k));
    }
  }
  return f;
}

BatchSampler::BatchSampler(std::vector<std::size_t> pool, std::size_t batch_size, std::uint64_t seed)
    : pool_(std::move(pool)), batch_size_(batch_size), rng_(seed) {
  if (pool_.empty() || batch_size_ == 0) throw DataError("batch sampler needs a non-empty pool and batch size");
  std::shuffle(pool_.begin(), pool_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  out.reserve(batch_size_);
  while (out.size() < batch_size_) {
    if (cursor_ == pool_.size()) {
      std::shuffle(pool_.begin(), pool_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(pool_[cursor_++]);
  }
  return out;
}

}  // namespace stcvae
