#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "stcvae/data.hpp"
#include "stcvae/errors.hpp"

using namespace stcvae;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("stcvae_test_data_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

struct Box {
  std::size_t x0 = 1000, x1 = 0, y0 = 1000, y1 = 0;
  std::size_t lit = 0;
};

Box bounding_box(const FactorDataset& ds, std::size_t i) {
  Box b;
  auto img = ds.image(i);
  for (std::size_t y = 0; y < ds.height; ++y)
    for (std::size_t x = 0; x < ds.width; ++x)
      if (img[y * ds.width + x]) {
        b.x0 = std::min(b.x0, x);
        b.x1 = std::max(b.x1, x);
        b.y0 = std::min(b.y0, y);
        b.y1 = std::max(b.y1, y);
        ++b.lit;
      }
  return b;
}

std::size_t find(const FactorDataset& ds, std::vector<std::uint32_t> v) {
  for (std::size_t i = 0; i < ds.count; ++i) {
    bool ok = true;
    for (std::size_t k = 0; k < v.size(); ++k) ok = ok && ds.factor(i, k) == v[k];
    if (ok) return i;
  }
  FAIL("combination not found");
  return 0;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

const std::vector<std::uint32_t> kSizes{8, 8, 4, 3};

}  // namespace

TEST_CASE("toy generator covers the factor grid") {
  auto ds = generate_toy_factors(kSizes, 32, 5);
  CHECK(ds.count == 768);
  CHECK(ds.height == 32);
  CHECK(ds.width == 32);
  CHECK(ds.channels == 1);
  CHECK(ds.pixels.size() == 768u * 1024u);
  std::set<std::vector<std::uint32_t>> seen;
  for (std::size_t i = 0; i < ds.count; ++i) {
    std::vector<std::uint32_t> v;
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(ds.factor(i, k) < kSizes[k]);
      v.push_back(ds.factor(i, k));
    }
    seen.insert(v);
    CHECK(bounding_box(ds, i).lit > 0);
  }
  CHECK(seen.size() == 768);
  validate(ds);
}

TEST_CASE("toy generator is deterministic per seed") {
  auto a = generate_toy_factors(kSizes, 32, 9);
  auto b = generate_toy_factors(kSizes, 32, 9);
  auto c = generate_toy_factors(kSizes, 32, 10);
  CHECK(a.pixels == b.pixels);
  CHECK(a.factor_values == b.factor_values);
  CHECK(a.factor_values != c.factor_values);
  // different storage order, same images per combination
  const std::size_t ia = find(a, {3, 5, 1, 2}), ic = find(c, {3, 5, 1, 2});
  CHECK(std::equal(a.image(ia).begin(), a.image(ia).end(), c.image(ic).begin()));
}

TEST_CASE("each factor drives its own attribute") {
  auto ds = generate_toy_factors(kSizes, 64, 1);
  SUBCASE("x-position") {
    auto b0 = bounding_box(ds, find(ds, {1, 4, 2, 0}));
    auto b1 = bounding_box(ds, find(ds, {6, 4, 2, 0}));
    CHECK(b0.y0 == b1.y0);
    CHECK(b0.y1 == b1.y1);
    CHECK(b1.x0 > b0.x0);
    CHECK(b0.lit == b1.lit);
  }
  SUBCASE("y-position") {
    auto b0 = bounding_box(ds, find(ds, {3, 0, 1, 1}));
    auto b1 = bounding_box(ds, find(ds, {3, 7, 1, 1}));
    CHECK(b0.x0 == b1.x0);
    CHECK(b0.x1 == b1.x1);
    CHECK(b1.y0 > b0.y0);
  }
  SUBCASE("scale") {
    auto b0 = bounding_box(ds, find(ds, {3, 3, 0, 0}));
    auto b1 = bounding_box(ds, find(ds, {3, 3, 3, 0}));
    CHECK(b1.lit > b0.lit);
    CHECK(b1.x1 - b1.x0 > b0.x1 - b0.x0);
  }
  SUBCASE("shape") {
    auto sq = bounding_box(ds, find(ds, {3, 3, 3, 0}));
    auto disc = bounding_box(ds, find(ds, {3, 3, 3, 1}));
    auto cross = bounding_box(ds, find(ds, {3, 3, 3, 2}));
    CHECK(sq.lit > disc.lit);
    CHECK(disc.lit > cross.lit);
  }
}

TEST_CASE("toy generator rejects bad requests") {
  const std::vector<std::uint32_t> big{100, 100, 6};
  CHECK_THROWS_AS(generate_toy_factors(big, 32, 0), DataError);
  CHECK_THROWS_AS(generate_toy_factors(kSizes, 48, 0), DataError);
  const std::vector<std::uint32_t> seven{2, 2, 2, 2, 2, 2, 2};
  CHECK_THROWS_AS(generate_toy_factors(seven, 32, 0), DataError);
  CHECK_THROWS_AS(generate_toy_factors(std::vector<std::uint32_t>{}, 32, 0), DataError);
}

TEST_CASE("FVDS round trip") {
  const auto dir = scratch("roundtrip");
  auto ds = generate_toy_factors(std::vector<std::uint32_t>{4, 3, 2}, 32, 2);
  write_fvds(ds, dir / "a.fvds");
  auto back = read_fvds(dir / "a.fvds");
  CHECK(back.same_content(ds));
  write_fvds(back, dir / "b.fvds");
  CHECK(slurp(dir / "a.fvds") == slurp(dir / "b.fvds"));
  const auto bytes = slurp(dir / "a.fvds");
  CHECK(bytes.size() == 4 + 4 + 5 * 4 + 3 * 4 + 24 * 3 * 4 + 24 * 1024);
  CHECK(std::string(bytes.data(), 4) == "FVDS");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 24);
}

TEST_CASE("FVDS format errors") {
  const auto dir = scratch("errors");
  auto ds = generate_toy_factors(std::vector<std::uint32_t>{4, 3}, 32, 2);
  write_fvds(ds, dir / "ok.fvds");
  const auto good = slurp(dir / "ok.fvds");

  SUBCASE("wrong magic") {
    auto bad = good;
    bad[0] = 'X';
    spit(dir / "x.fvds", bad);
    CHECK_THROWS_WITH_AS(read_fvds(dir / "x.fvds"), "FVDS bad magic at offset 0", FormatError);
  }
  SUBCASE("wrong version") {
    auto bad = good;
    bad[4] = 2;
    spit(dir / "x.fvds", bad);
    CHECK_THROWS_WITH_AS(read_fvds(dir / "x.fvds"), doctest::Contains("version"), FormatError);
  }
  SUBCASE("short pixel payload") {
    auto bad = good;
    bad.resize(bad.size() - 7);
    spit(dir / "x.fvds", bad);
    CHECK_THROWS_WITH_AS(read_fvds(dir / "x.fvds"), "FVDS pixel payload short", FormatError);
  }
  SUBCASE("truncated header") {
    spit(dir / "x.fvds", std::vector<char>(good.begin(), good.begin() + 14));
    CHECK_THROWS_WITH_AS(read_fvds(dir / "x.fvds"), doctest::Contains("truncated"), FormatError);
  }
  SUBCASE("factor value out of range") {
    auto bad = good;
    bad[4 + 4 + 20 + 8] = 9;  // first factor value of sample 0
    spit(dir / "x.fvds", bad);
    CHECK_THROWS_AS(read_fvds(dir / "x.fvds"), FormatError);
  }
  SUBCASE("trailing bytes") {
    auto bad = good;
    bad.push_back(0);
    spit(dir / "x.fvds", bad);
    CHECK_THROWS_AS(read_fvds(dir / "x.fvds"), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_fvds(dir / "none.fvds"), FormatError); }
}

TEST_CASE("batches and sampler") {
  auto ds = generate_toy_factors(std::vector<std::uint32_t>{4, 3}, 32, 2);
  std::vector<std::size_t> idx{0, 5, 7};
  auto x = image_batch(ds, idx);
  CHECK(x.rows() == 3);
  CHECK(x.cols() == 1024);
  CHECK(x.minCoeff() >= 0.0f);
  CHECK(x.maxCoeff() <= 1.0f);
  CHECK(x(1, 0) == static_cast<float>(ds.image(5)[0]) / 255.0f);
  auto f = factor_batch(ds, idx);
  CHECK(f(2, 1) == static_cast<int>(ds.factor(7, 1)));

  std::vector<std::size_t> pool(10);
  std::iota(pool.begin(), pool.end(), 0);
  BatchSampler a(pool, 4, 3), b(pool, 4, 3);
  std::multiset<std::size_t> epoch;
  for (int i = 0; i < 20; ++i) {
    auto na = a.next();
    CHECK(na == b.next());
    CHECK(na.size() == 4);
  }
  CHECK_THROWS_AS(BatchSampler({}, 4, 0), DataError);
}
