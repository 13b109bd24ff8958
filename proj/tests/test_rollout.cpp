#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vana/rng.hpp"
#include "vana/rollout.hpp"

using vana::NeighborhoodSpec;
using vana::Tensor;
using T64 = Tensor<double>;

namespace {

// Reader oracle for the pinned P5 format.
struct Pgm {
  std::int64_t width = 0, height = 0, maxval = 0;
  std::vector<unsigned char> bytes;
};

Pgm read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string magic;
  Pgm p;
  in >> magic >> p.width >> p.height >> p.maxval;
  REQUIRE(magic == "P5");
  in.get();  // single whitespace after the header
  p.bytes.resize(static_cast<std::size_t>(p.width * p.height));
  in.read(reinterpret_cast<char*>(p.bytes.data()), static_cast<std::streamsize>(p.bytes.size()));
  REQUIRE(in.gcount() == static_cast<std::streamsize>(p.bytes.size()));
  return p;
}

T64 softmax_rows(T64 probs) {
  const std::int64_t rows = probs.size() / probs.dim(probs.rank() - 1);
  const std::int64_t w = probs.dim(probs.rank() - 1);
  for (std::int64_t r = 0; r < rows; ++r) {
    double z = 0;
    for (std::int64_t j = 0; j < w; ++j) z += std::exp(probs[r * w + j]);
    for (std::int64_t j = 0; j < w; ++j) probs[r * w + j] = std::exp(probs[r * w + j]) / z;
  }
  return probs;
}

}  // namespace

TEST_CASE("degenerate single-query map") {
  const T64 probs({1, 1, 1}, {1.0});
  const auto map = vana::accumulate_density(probs, {1, 1});
  REQUIRE(map.values.shape() == vana::Shape{1, 1});
  CHECK(map.values[0] == 1.0);
}

TEST_CASE("self-only windows deposit a uniform map") {
  const T64 probs = T64::full({4, 5, 1}, 1.0);
  const auto map = vana::accumulate_density(probs, {1, 1});
  for (std::int64_t i = 0; i < map.values.size(); ++i) CHECK(map.values[i] == 1.0);
}

TEST_CASE("all-zero probabilities yield the all-zero map") {
  const T64 zero({3, 3, 9});
  const auto map = vana::accumulate_density(zero, {3, 1});
  CHECK(vana::max_abs(map.values) == 0.0);
}

TEST_CASE("scatter matches the naive query/neighbor double loop") {
  vana::Rng rng(3);
  const NeighborhoodSpec spec{3, 1};
  const std::int64_t H = 6, W = 5;
  const T64 probs = softmax_rows(vana::rand_uniform<double>({H, W, 9}, rng, -1, 1));
  const T64 raw = vana::scatter_probability_mass(probs, spec);

  T64 expect({H, W});
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t c = 0; c < W; ++c) {
      const auto nbrs = vana::neighbors_2d({static_cast<int>(r), static_cast<int>(c)},
                                           {static_cast<int>(H), static_cast<int>(W)}, spec);
      for (std::size_t j = 0; j < nbrs.size(); ++j)
        expect(nbrs[j].first, nbrs[j].second) +=
            probs(r, c, static_cast<std::int64_t>(j));
    }
  CHECK(vana::max_abs_diff(raw, expect) < 1e-12);
}

TEST_CASE("pre-normalization mass equals the query count") {
  vana::Rng rng(4);
  const NeighborhoodSpec spec{3, 2};
  const T64 probs = softmax_rows(vana::rand_uniform<double>({8, 8, 9}, rng, -1, 1));
  const T64 raw = vana::scatter_probability_mass(probs, spec);
  CHECK(vana::sum(raw) == doctest::Approx(64.0).epsilon(1e-12));
}

TEST_CASE("uniform attention is symmetric under the grid's symmetries") {
  const std::int64_t n = 7;
  const T64 probs = T64::full({n, n, 9}, 1.0 / 9.0);
  const T64 raw = vana::scatter_probability_mass(probs, {3, 1});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < n; ++c) {
      CHECK(raw(r, c) == doctest::Approx(raw(c, r)).epsilon(1e-12));          // transpose
      CHECK(raw(r, c) == doctest::Approx(raw(n - 1 - r, c)).epsilon(1e-12));  // flip
    }
}

TEST_CASE("probability rows must be normalized or empty") {
  T64 probs = T64::full({2, 2, 1}, 0.37);
  CHECK_THROWS_AS(vana::scatter_probability_mass(probs, {1, 1}), vana::ValueError);
  CHECK_THROWS_AS(vana::scatter_probability_mass(T64({2, 2, 4}), {3, 1}), vana::ShapeError);
}

TEST_CASE("pgm bytes are pinned") {
  const auto dir = std::filesystem::temp_directory_path();
  {
    vana::DensityMap one;
    one.values = T64({1, 1}, {1.0});
    const auto path = dir / "vana_one.pgm";
    vana::write_pgm(one, path);
    std::ifstream in(path, std::ios::binary);
    std::string contents((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
    CHECK(contents == std::string("P5\n1 1\n255\n\xff", 12));
    std::filesystem::remove(path);
  }
  {
    vana::DensityMap two;
    two.values = T64({1, 2}, {0.0, 1.0});
    const auto path = dir / "vana_two.pgm";
    vana::write_pgm(two, path);
    const Pgm p = read_pgm(path);
    CHECK(p.width == 2);
    CHECK(p.height == 1);
    CHECK(p.bytes[0] == 0x00);
    CHECK(p.bytes[1] == 0xff);
    std::filesystem::remove(path);
  }
}

TEST_CASE("pgm round-trip reproduces the quantized map") {
  vana::Rng rng(5);
  vana::DensityMap map;
  map.values = vana::rand_uniform<double>({12, 12}, rng, 0.0, 1.0);

  const auto path = std::filesystem::temp_directory_path() / "vana_roundtrip.pgm";
  vana::write_pgm(map, path);
  const Pgm p = read_pgm(path);
  REQUIRE(p.width == 12);
  REQUIRE(p.height == 12);
  for (std::int64_t i = 0; i < map.values.size(); ++i)
    CHECK(static_cast<long>(p.bytes[static_cast<std::size_t>(i)]) ==
          std::lround(255.0 * map.values[i]));

  // Identical maps produce byte-identical files.
  const auto path2 = std::filesystem::temp_directory_path() / "vana_roundtrip2.pgm";
  vana::write_pgm(map, path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("write_pgm refuses broken maps and unwritable paths") {
  vana::DensityMap map;
  map.values = T64({1, 1}, {2.0});
  CHECK_THROWS_AS(vana::write_pgm(map, std::filesystem::temp_directory_path() / "bad.pgm"),
                  vana::ValueError);
  map.values = T64({1, 1}, {0.5});
  CHECK_THROWS(vana::write_pgm(map, "/nonexistent-dir/map.pgm"));
}
