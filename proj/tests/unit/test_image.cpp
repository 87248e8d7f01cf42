#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "scgs/error.hpp"
#include "scgs/image.hpp"

using namespace scgs;

TEST(Image, QuantizeRoundsToByteGrid) {
  Image img(1, 3, 1);
  img.data = {-0.2, 0.5, 1.7};
  quantize_8bit(img);
  EXPECT_EQ(img.data[0], 0.0);
  EXPECT_EQ(img.data[1], 128.0 / 255.0);
  EXPECT_EQ(img.data[2], 1.0);
}

TEST(Image, PngRoundTripIsLosslessOnQuantizedImages) {
  std::mt19937_64 rng(1);
  for (int c : {1, 3}) {
    Image img = fixture::random_image(7, 5, c, rng);
    quantize_8bit(img);
    EXPECT_EQ(decode_png(encode_png(img)), img);
  }
}

TEST(Image, PngFileRoundTrip) {
  fixture::TempDir dir;
  std::mt19937_64 rng(2);
  Image img = fixture::random_image(4, 6, 3, rng);
  quantize_8bit(img);
  write_png(dir / "x.png", img);
  EXPECT_EQ(read_png(dir / "x.png"), img);
}

TEST(Image, DecodeRejectsGarbage) {
  EXPECT_ANY_THROW(decode_png({1, 2, 3, 4}));
}

TEST(Image, PlaneConversionRoundTrip) {
  Plane p(2, 2);
  p.data = {0.0, 0.25, 0.5, 1.0};
  EXPECT_EQ(image_to_plane(plane_to_image(p)), p);
}

TEST(Box, AreaAndValidity) {
  Box b{1, 2, 4, 6};
  EXPECT_EQ(b.area(), 12);
  EXPECT_TRUE(b.valid_within(4, 6));
  EXPECT_FALSE(b.valid_within(3, 6));
  EXPECT_FALSE((Box{2, 2, 2, 3}).valid_within(5, 5));
}
