#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "varplace/error.hpp"
#include "varplace/io.hpp"

using namespace varplace;

TEST_CASE("format_double round-trips exactly") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    CHECK(parse_double(format_double(v)) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(5.0) == "5");
}

TEST_CASE("parse_double handles non-finite values and rejects junk") {
  CHECK(std::isinf(parse_double("inf")));
  CHECK(parse_double("-inf") < 0.0);
  CHECK(std::isnan(parse_double("nan")));
  CHECK_THROWS_AS(parse_double("1.5x"), ValidationError);
  CHECK_THROWS_AS(parse_double(""), ValidationError);
}

TEST_CASE("FNV-1a matches reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hash_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("read_csv trims fields and skips blank lines") {
  const auto rows = read_csv("a, b ,c\n\n1,2 , 3\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][1] == "b");
  CHECK(rows[1][2] == "3");
}

TEST_CASE("write_file_atomic creates directories and leaves no temp file") {
  const auto dir = std::filesystem::temp_directory_path() / "varplace_io_test";
  std::filesystem::remove_all(dir);
  const std::string path = (dir / "sub" / "x.txt").string();
  write_file_atomic(path, "one");
  write_file_atomic(path, "two");
  CHECK(read_file(path) == "two");
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  CHECK_THROWS_AS(read_file((dir / "missing").string()), IoError);
  std::filesystem::remove_all(dir);
}
