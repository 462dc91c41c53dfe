#include <doctest.h>

#include <sstream>

#include "cbd/error.hpp"
#include "cbd/io_util.hpp"

using namespace cbd;

TEST_CASE("little-endian primitives round-trip") {
  std::ostringstream out;
  write_u32(out, 0xdeadbeefu);
  write_u64(out, 0x0123456789abcdefULL);
  write_f64(out, -1.5e-300);
  const double data[3] = {1.0, -2.5, 3.25};
  write_f64_array(out, data, 3);

  std::istringstream in(out.str());
  CHECK(read_u32(in) == 0xdeadbeefu);
  CHECK(read_u64(in) == 0x0123456789abcdefULL);
  CHECK(read_f64(in) == -1.5e-300);
  const auto arr = read_f64_array(in);
  REQUIRE(arr.size() == 3);
  CHECK(arr[0] == 1.0);
  CHECK(arr[1] == -2.5);
  CHECK(arr[2] == 3.25);
}

TEST_CASE("truncated stream raises a truncation error") {
  std::istringstream in(std::string("\x01\x02", 2));
  try {
    read_u32(in);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.code() == FormatError::Code::truncated);
  }
}

TEST_CASE("crc32 matches the reference value for a known string") {
  // "123456789" -> 0xCBF43926 is the standard IEEE 802.3 check value.
  CHECK(crc32(std::string("123456789")) == 0xcbf43926u);
  CHECK(crc32(std::string("")) == 0u);
}

TEST_CASE("format_double round-trips doubles through text") {
  for (double v : {0.0, 1.0 / 3.0, -2.5e-17, 1e300, 0.1, 123456.789}) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
}

TEST_CASE("kv config parses keys, comments, and types") {
  const auto cfg = KvConfig::parse("a = 1\n# comment\n b=2.5 # trailing\nname = hello\nflag=true\n\n");
  CHECK(cfg.get_int("a", 0) == 1);
  CHECK(cfg.get_double("b", 0) == 2.5);
  CHECK(cfg.get_string("name", "") == "hello");
  CHECK(cfg.get_bool("flag", false));
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(KvConfig::parse("novalue\n"), FormatError);
  CHECK_THROWS_AS(cfg.get_int("name", 0), ValidationError);
}
