#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace scgs {

/// Dense H x W x C image, interleaved (HWC), intensities in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * width + c) * channels + ch]; }
  double at(int r, int c, int ch) const { return data[(static_cast<size_t>(r) * width + c) * channels + ch]; }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

/// Single-channel H x W plane of reals (activation maps, masks).
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}
  double& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
  bool operator==(const Plane&) const = default;
};

/// Half-open pixel box [row0,row1) x [col0,col1).
struct Box {
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;
  int area() const { return (row1 - row0) * (col1 - col0); }
  bool valid_within(int h, int w) const {
    return row0 >= 0 && col0 >= 0 && row1 <= h && col1 <= w && row1 > row0 && col1 > col0;
  }
  bool operator==(const Box&) const = default;
};

/// Rounds every intensity to the nearest multiple of 1/255 and clamps to [0,1].
void quantize_8bit(Image& img);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Grayscale plane (values in [0,1]) to a 1-channel image.
Image plane_to_image(const Plane& p);
Plane image_to_plane(const Image& img);

}  // namespace scgs
