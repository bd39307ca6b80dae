#include <catch_amalgamated.hpp>

#include <cstring>
#include <random>

#include "posthoc/phdat.hpp"
#include "test_support.hpp"

using namespace posthoc;

namespace {

SubjectStack random_stack(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> dim(1, 6);
  std::uniform_real_distribution<float> size(0.5f, 4.0f);
  std::uniform_real_distribution<double> coef(-100.0, 100.0);
  std::normal_distribution<float> value(0.0f, 3.0f);
  const std::array<std::uint32_t, 3> dims{dim(rng), dim(rng), dim(rng)};
  Affine a{};
  for (int i = 0; i < 12; ++i) a[i] = coef(rng);
  a[15] = 1.0;
  Grid3 grid(dims, {size(rng), size(rng), size(rng)}, a);
  std::vector<std::uint8_t> inside(grid.voxel_count());
  for (auto& v : inside) v = rng() % 3 != 0;
  inside[rng() % inside.size()] = 1;
  auto mask = std::make_shared<const Mask>(grid, inside);
  const std::size_t n = 1 + rng() % 5;
  std::vector<float> data(n * mask->size());
  for (auto& v : data) v = value(rng);
  return SubjectStack(mask, n, data);
}

std::vector<char> minimal_file() {
  auto mask = testing::full_mask(1);
  return encode_phdat(SubjectStack(mask, 1, {0.5f}));
}

} // namespace

TEST_CASE("PHDAT minimal container") {
  const auto bytes = minimal_file();
  // magic + 4 u32 + 3 f32 + 16 f64 + 1 mask byte + 1 f32
  REQUIRE(bytes.size() == 4 + 16 + 12 + 128 + 1 + 4);
  REQUIRE(std::memcmp(bytes.data(), "PHD1", 4) == 0);
  const auto stack = decode_phdat(bytes);
  CHECK(stack.n_subjects() == 1);
  CHECK(stack.m() == 1);
  CHECK(stack.subject(0)[0] == 0.5f);
}

TEST_CASE("PHDAT round trip is byte identical") {
  std::mt19937_64 rng(20240611);
  testing::TempDir dir("phdat");
  for (int i = 0; i < 20; ++i) {
    const auto stack = random_stack(rng);
    const auto path = dir.path() / ("s" + std::to_string(i) + ".phdat");
    write_phdat(stack, path);
    const auto back = read_phdat(path);
    CHECK(back == stack);
    CHECK(encode_phdat(back) == detail::slurp(path));
  }
}

TEST_CASE("PHDAT rejects malformed input") {
  auto bytes = minimal_file();
  SECTION("bad magic") {
    std::memcpy(bytes.data(), "XXXX", 4);
    CHECK_THROWS_AS(decode_phdat(bytes), FormatError);
  }
  SECTION("truncated") {
    bytes.pop_back();
    CHECK_THROWS_AS(decode_phdat(bytes), FormatError);
    CHECK_THROWS_AS(decode_phdat(std::span<const char>(bytes.data(), 10)), FormatError);
  }
  SECTION("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_phdat(bytes), FormatError);
  }
  SECTION("non-finite value") {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + bytes.size() - 4, &nan, 4);
    CHECK_THROWS_AS(decode_phdat(bytes), DataError);
  }
  SECTION("empty mask") {
    bytes[bytes.size() - 5] = 0; // mask byte; data section becomes trailing
    bytes.resize(bytes.size() - 4);
    CHECK_THROWS_AS(decode_phdat(bytes), MaskError);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(read_phdat("/nonexistent/dir/x.phdat"), IoError);
  }
}

TEST_CASE("PHDAT write to an unwritable path fails") {
  const auto mask = testing::full_mask(1);
  CHECK_THROWS_AS(write_phdat(SubjectStack(mask, 1, {0.5f}), "/nonexistent/dir/x.phdat"), IoError);
}

TEST_CASE("Grid and mask invariants") {
  CHECK_THROWS_AS(Grid3({0, 1, 1}, {1, 1, 1}, Affine{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}), DataError);
  CHECK_THROWS_AS(Grid3({1, 1, 1}, {1, -1, 1}, Affine{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}), DataError);
  CHECK_THROWS_AS(Grid3({1, 1, 1}, {1, 1, 1}, Affine{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1, 1}), DataError);
  const auto grid = Grid3::scaled({2, 2, 2}, 3.0f);
  CHECK(grid.voxel_volume() == 27.0);
  CHECK_THROWS_AS(Mask(grid, std::vector<std::uint8_t>(8, 0)), MaskError);
  CHECK_THROWS_AS(Mask(grid, std::vector<std::uint8_t>(7, 1)), DataError);
}

TEST_CASE("Mask flattening is a bijection") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const auto stack = random_stack(rng);
    const Mask& mask = stack.mask();
    std::size_t seen = 0;
    for (std::size_t f = 0; f < mask.grid().voxel_count(); ++f) {
      const auto idx = mask.masked_index(f);
      if (!mask.inside()[f]) {
        CHECK(idx == Mask::outside);
        continue;
      }
      REQUIRE(idx == static_cast<std::int64_t>(seen));
      CHECK(mask.flat_index(seen) == f);
      const auto c = mask.coords(seen);
      CHECK(mask.grid().flat_index(c[0], c[1], c[2]) == f);
      ++seen;
    }
    CHECK(seen == mask.size());
    CHECK_THROWS_AS(mask.flat_index(mask.size()), IndexError);
  }
}

TEST_CASE("x-fastest flattening order") {
  const auto grid = Grid3::scaled({4, 3, 2}, 1.0f);
  CHECK(grid.flat_index(1, 0, 0) == 1);
  CHECK(grid.flat_index(0, 1, 0) == 4);
  CHECK(grid.flat_index(0, 0, 1) == 12);
  CHECK(grid.flat_index(3, 2, 1) == 23);
}

TEST_CASE("voxel_to_world") {
  SECTION("identity affine") {
    const auto mask = testing::full_mask(2, 2, 2);
    CHECK(voxel_to_world(*mask, 0) == Vec3{0, 0, 0});
  }
  SECTION("scaled and translated affine") {
    const auto mask = Mask::full(Grid3::scaled({30, 30, 30}, 3.0f, {-90, -126, -72}));
    const auto idx = mask.masked_index(mask.grid().flat_index(19, 1, 1));
    CHECK(voxel_to_world(mask, static_cast<std::size_t>(idx)) == Vec3{-33, -123, -69});
    CHECK_THROWS_AS(voxel_to_world(mask, mask.size()), IndexError);
  }
  SECTION("world to voxel inverts it") {
    std::mt19937_64 rng(99);
    const Affine a{2.5, 0.3, -0.1, -90, 0.2, 3.1, 0.05, -126, -0.4, 0.1, 2.9, -72, 0, 0, 0, 1};
    const auto mask = Mask::full(Grid3({40, 50, 30}, {2.5f, 3.1f, 2.9f}, a));
    for (int i = 0; i < 100; ++i) {
      const std::size_t v = rng() % mask.size();
      const auto c = mask.coords(v);
      const auto back = mask.grid().to_voxel(voxel_to_world(mask, v));
      for (int d = 0; d < 3; ++d) CHECK(std::fabs(back[d] - c[d]) < 1e-9);
    }
  }
}

TEST_CASE("Subject stack invariants") {
  const auto mask = testing::full_mask(2);
  CHECK_THROWS_AS(SubjectStack(mask, 1, {1.0f}), DataError);
  CHECK_THROWS_AS(SubjectStack(mask, 1, {1.0f, std::numeric_limits<float>::infinity()}), DataError);
  CHECK_THROWS_AS(StatMap(mask, {0.0}), DataError);
  CHECK_THROWS_AS(PValueVector({0.5, 1.5}), DataError);
}
