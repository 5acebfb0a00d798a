#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "design/tensor.hpp"
#include "support.hpp"

using namespace design;
using testing_support::random_bits;
using testing_support::random_pm1;

TEST_CASE("pack encodes +1 as a set bit", "[tensor][pack]") {
  const IntPlane p(2, 2, std::vector<std::int32_t>{1, -1, -1, 1});
  const BitPlane b = pack(p);
  CHECK(b.height() == 2);
  CHECK(b.width() == 2);
  CHECK(b.bit(0, 0));
  CHECK_FALSE(b.bit(0, 1));
  CHECK_FALSE(b.bit(1, 0));
  CHECK(b.bit(1, 1));
}

TEST_CASE("pack of a single -1 is a clear bit", "[tensor][pack]") {
  const BitPlane b = pack(IntPlane(1, 1, std::vector<std::int32_t>{-1}));
  CHECK_FALSE(b.bit(0, 0));
  CHECK(b.popcount() == 0);
}

TEST_CASE("pack rejects values outside {-1,+1}", "[tensor][pack]") {
  CHECK_THROWS_AS(pack(IntPlane(1, 3, std::vector<std::int32_t>{1, 0, -1})), std::invalid_argument);
  CHECK_THROWS_AS(pack(IntPlane(1, 1, std::vector<std::int32_t>{2})), std::invalid_argument);
}

TEST_CASE("unpack maps bits to signs", "[tensor][unpack]") {
  BitPlane b(1, 2);
  b.set(0, 0, true);
  CHECK(unpack(b) == IntPlane(1, 2, std::vector<std::int32_t>{1, -1}));
  const IntPlane all = unpack(BitPlane(4, 4));
  for (auto v : all.values()) CHECK(v == -1);
}

TEST_CASE("pack/unpack round trip on random 33x65 planes", "[tensor][property]") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const IntPlane p = random_pm1(33, 65, rng);
    const BitPlane b = pack(p);
    REQUIRE(b.padding_clear());
    REQUIRE(unpack(b) == p);
    REQUIRE(pack(unpack(b)) == b);
  }
}

TEST_CASE("round trip for every size 1..64 in each dimension", "[tensor][property]") {
  std::mt19937_64 rng(2);
  for (std::size_t h = 1; h <= 64; ++h) {
    for (std::size_t w = 1; w <= 64; ++w) {
      const IntPlane p = random_pm1(h, w, rng);
      const BitPlane b = pack(p);
      REQUIRE(b.padding_clear());
      REQUIRE(unpack(b) == p);
    }
  }
  // widths past one word
  for (std::size_t w : {65u, 127u, 128u, 129u, 200u}) {
    const IntPlane p = random_pm1(3, w, rng);
    REQUIRE(unpack(pack(p)) == p);
  }
}

TEST_CASE("padding bits stay zero after mutation", "[tensor][property]") {
  std::mt19937_64 rng(3);
  for (std::size_t w : {1u, 5u, 63u, 64u, 65u, 100u}) {
    BitPlane b(4, w);
    for (int step = 0; step < 200; ++step) {
      b.set(testing_support::uniform(rng, 0, 3), testing_support::uniform(rng, 0, w - 1), rng() & 1u);
      REQUIRE(b.padding_clear());
    }
    REQUIRE(b.negated().padding_clear());
    std::vector<BitPlane::Word> dirty(b.words().size(), ~BitPlane::Word{0});
    const BitPlane f = BitPlane::from_words(4, w, dirty);
    REQUIRE(f.padding_clear());
    REQUIRE(f.popcount() == 4 * w);
  }
}

TEST_CASE("negated flips every element", "[tensor]") {
  std::mt19937_64 rng(4);
  const IntPlane p = random_pm1(7, 70, rng);
  const IntPlane n = unpack(pack(p).negated());
  for (std::size_t i = 0; i < p.size(); ++i) REQUIRE(n.values()[i] == -p.values()[i]);
}

TEST_CASE("window extracts bits across word boundaries", "[tensor]") {
  std::mt19937_64 rng(5);
  for (std::size_t w : {10u, 64u, 90u, 130u}) {
    const BitPlane b = random_bits(3, w, rng);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t r = testing_support::uniform(rng, 0, 2);
      const std::size_t col = testing_support::uniform(rng, 0, w - 1);
      const std::size_t len = testing_support::uniform(rng, 1, std::min<std::size_t>(64, w - col));
      const auto got = b.window(r, col, len);
      for (std::size_t i = 0; i < 64; ++i) {
        const bool expect = i < len && b.bit(r, col + i);
        REQUIRE(((got >> i) & 1u) == expect);
      }
    }
  }
}

TEST_CASE("plane constructor validates length", "[tensor]") {
  CHECK_THROWS_AS(RealPlane(2, 2, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK_NOTHROW(RealPlane(0, 5));
}

TEST_CASE("feature stacks require matching spatial dims", "[tensor]") {
  CHECK_THROWS_AS(FeatureStack<IntPlane>({IntPlane(2, 2), IntPlane(2, 3)}), std::invalid_argument);
  const FeatureStack<IntPlane> s({IntPlane(2, 3), IntPlane(2, 3, 1)});
  CHECK(s.channels() == 2);
  CHECK(s.height() == 2);
  CHECK(s.width() == 3);
  CHECK(s[1](1, 2) == 1);
}

TEST_CASE("serialization layout and round trips", "[tensor][io]") {
  std::mt19937_64 rng(6);
  SECTION("header bytes") {
    std::ostringstream os;
    write_plane(os, IntPlane(2, 3, 7));
    const std::string s = os.str();
    REQUIRE(s.size() == 4 + 4 + 4 + 1 + 6 * 4);
    CHECK(s.substr(0, 4) == "DSGN");
    CHECK(static_cast<unsigned char>(s[4]) == 2);
    CHECK(static_cast<unsigned char>(s[8]) == 3);
    CHECK(static_cast<unsigned char>(s[12]) == static_cast<unsigned char>(DType::kInt32));
    CHECK(static_cast<unsigned char>(s[13]) == 7);  // little-endian payload
  }
  SECTION("every dtype") {
    const BitPlane b = random_bits(5, 77, rng);
    const IntPlane ip = unpack(b);
    const RealPlane rp = testing_support::random_real(4, 9, rng);
    const FloatPlane fp = convert<float>(rp);
    std::stringstream ss;
    write_plane(ss, b);
    write_plane(ss, ip);
    write_plane(ss, rp);
    write_plane(ss, fp);
    CHECK(read_bit_plane(ss) == b);
    CHECK(read_plane<std::int32_t>(ss) == ip);
    CHECK(read_plane<double>(ss) == rp);
    CHECK(read_plane<float>(ss) == fp);
  }
  SECTION("bad input") {
    std::stringstream bad("XXXX");
    CHECK_THROWS(read_plane<double>(bad));
    std::stringstream ss;
    write_plane(ss, IntPlane(2, 2));
    CHECK_THROWS(read_plane<double>(ss));  // dtype tag mismatch
    std::ostringstream os;
    write_plane(os, IntPlane(2, 2));
    std::stringstream truncated(os.str().substr(0, os.str().size() - 1));
    CHECK_THROWS(read_plane<std::int32_t>(truncated));
  }
}
