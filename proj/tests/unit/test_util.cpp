#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "scgs/error.hpp"
#include "scgs/util.hpp"

using namespace scgs;

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(std::string_view("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(std::string_view("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Sha256, FileMatchesText) {
  fixture::TempDir dir;
  write_file_atomic(dir / "a.txt", std::string_view("hello"));
  EXPECT_EQ(sha256_file(dir / "a.txt"), sha256_hex(std::string_view("hello")));
  EXPECT_THROW(sha256_file(dir / "missing"), IoError);
}

TEST(Base64, KnownVectorsAndRoundTrip) {
  const std::string s = "foobar";
  std::vector<std::uint8_t> bytes(s.begin(), s.end());
  EXPECT_EQ(base64_encode(bytes), "Zm9vYmFy");
  EXPECT_EQ(base64_encode(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4)), "Zm9vYg==");
  EXPECT_EQ(base64_decode("Zm9vYg=="), std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4));
  std::mt19937_64 rng(3);
  for (int n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
}

TEST(Base64, MalformedInputIsProtocolError) {
  EXPECT_THROW(base64_decode("!!!not base64!!!"), ProtocolError);
  EXPECT_THROW(base64_decode("abc"), ProtocolError);
}

TEST(DeriveSeed, DeterministicAndTagSensitive) {
  EXPECT_EQ(derive_seed(7, "retrain"), derive_seed(7, "retrain"));
  EXPECT_NE(derive_seed(7, "retrain"), derive_seed(7, "cluster"));
  EXPECT_NE(derive_seed(7, std::uint64_t{1}), derive_seed(8, std::uint64_t{1}));
}

TEST(AtomicWrite, ReplacesContents) {
  fixture::TempDir dir;
  write_file_atomic(dir / "f", std::string_view("one"));
  write_file_atomic(dir / "f", std::string_view("two"));
  EXPECT_EQ(read_file_text(dir / "f"), "two");
  EXPECT_THROW(read_file_text(dir / "nope"), IoError);
}
