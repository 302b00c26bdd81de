#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "spse/checkpoint.hpp"
#include "spse/errors.hpp"

using namespace spse;

namespace {

void u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("byte layout matches a hand-assembled container") {
    Checkpoint ck;
    ck.put("ab", Tensor(Shape{2}, {1.0, -2.0}));
    ck.put("s", Tensor::scalar(0.5));

    std::vector<std::uint8_t> ref{'S', 'P', 'S', 'E'};
    u32(ref, 1);
    u32(ref, 2);
    u32(ref, 2);
    ref.push_back('a');
    ref.push_back('b');
    u32(ref, 1);
    u32(ref, 2);
    for (double v : {1.0, -2.0}) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) ref.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    u32(ref, 1);
    ref.push_back('s');
    u32(ref, 0);
    const auto bits = std::bit_cast<std::uint64_t>(0.5);
    for (int i = 0; i < 8; ++i) ref.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));

    CHECK(ck.to_bytes() == ref);
    CHECK(Checkpoint::from_bytes(ref) == ck);
  }

  TEST_CASE("special values survive bit for bit") {
    Checkpoint ck;
    const double vals[] = {-0.0, std::numeric_limits<double>::denorm_min(), std::numeric_limits<double>::max(),
                           -std::numeric_limits<double>::infinity(), 1.0 / 3.0};
    ck.put("v", Tensor(Shape{5}, std::vector<double>(std::begin(vals), std::end(vals))));
    const Tensor back = Checkpoint::from_bytes(ck.to_bytes()).get("v");
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::bit_cast<std::uint64_t>(back[i]) == std::bit_cast<std::uint64_t>(vals[i]));
  }

  TEST_CASE("entries keep insertion order and replace in place") {
    Checkpoint ck;
    ck.put("b", Tensor::scalar(1));
    ck.put("a.x", Tensor::scalar(2));
    ck.put("a.y", Tensor::scalar(3));
    ck.put("b", Tensor::scalar(4));
    REQUIRE(ck.entries().size() == 3);
    CHECK(ck.entries()[0].first == "b");
    CHECK(ck.get("b").item() == 4);
    CHECK(ck.names_with_prefix("a.") == std::vector<std::string>{"a.x", "a.y"});
    CHECK(ck.contains("a.x"));
    CHECK_FALSE(ck.find("zz").has_value());
    CHECK_THROWS_AS(ck.get("zz"), FormatError);
  }

  TEST_CASE("malformed containers are rejected") {
    Checkpoint ck;
    ck.put("x", Tensor(Shape{2, 2}, 1.0));
    const auto good = ck.to_bytes();

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(Checkpoint::from_bytes(bad_magic), FormatError);

    auto bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_AS(Checkpoint::from_bytes(bad_version), FormatError);

    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() - 1}) {
      CHECK_THROWS_AS(Checkpoint::from_bytes(std::vector<std::uint8_t>(good.begin(), good.begin() + cut)), FormatError);
    }

    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_AS(Checkpoint::from_bytes(trailing), FormatError);
  }

  TEST_CASE("file round trip and missing files") {
    const auto dir = std::filesystem::temp_directory_path() / "spse_unit_ck";
    std::filesystem::create_directories(dir);
    Checkpoint ck;
    ck.put("grid", Tensor(Shape{2, 3, 4}, 0.25));
    ck.write(dir / "a.spse");
    CHECK(Checkpoint::read(dir / "a.spse") == ck);
    CHECK_THROWS_AS(Checkpoint::read(dir / "missing.spse"), IoError);
  }
}
