#include <doctest.h>

#include "apc/container.hpp"
#include "apc/error.hpp"
#include "support.hpp"

using namespace apc;

namespace {

Container sample() {
  Container c;
  c.meta = {{"ratio", 0.1}, {"signature", "abc"}};
  c.arrays.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.arrays.push_back({"b", {1}, {-0.5f}});
  return c;
}

}  // namespace

TEST_CASE("container round trip is lossless") {
  const auto bytes = encode_container(kBankMagic, sample());
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "APCBANK1");
  const Container c = decode_container(kBankMagic, bytes, "mem");
  CHECK(c.meta == sample().meta);
  REQUIRE(c.arrays.size() == 2);
  CHECK(c.at("a").shape == std::vector<int>{2, 3});
  CHECK(c.at("a").data == sample().arrays[0].data);
  CHECK(c.at("b").data == std::vector<float>{-0.5f});
  CHECK(encode_container(kBankMagic, c) == bytes);
}

TEST_CASE("container rejects damaged input") {
  auto bytes = encode_container(kWeightsMagic, sample());
  SUBCASE("every truncation") {
    for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
      std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + std::ptrdiff_t(cut));
      CHECK_THROWS_AS(decode_container(kWeightsMagic, part, "mem"), IntegrityError);
    }
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_container(kWeightsMagic, bytes, "mem"), IntegrityError);
  }
  SUBCASE("other version of the same family") {
    bytes[6] = '2';
    CHECK_THROWS_AS(decode_container(kWeightsMagic, bytes, "mem"), UnsupportedVersionError);
  }
  SUBCASE("foreign magic") {
    CHECK_THROWS_AS(decode_container(kBankMagic, bytes, "mem"), IntegrityError);
  }
}

TEST_CASE("container file io") {
  test::TempDir dir("container");
  write_container(dir / "x.apcb", kBankMagic, sample());
  CHECK(read_container(dir / "x.apcb", kBankMagic).at("a").data.size() == 6);
  CHECK_THROWS_AS(read_container(dir / "missing.apcb", kBankMagic), NotFoundError);
}

TEST_CASE("fnv1a matches published vectors") {
  Fnv1a h;
  CHECK(h.hex() == "cbf29ce484222325");
  h.update("a", 1);
  CHECK(h.hex() == "af63dc4c8601ec8c");
}
