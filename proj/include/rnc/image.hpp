#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rnc {

/// 8-bit grayscale raster, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0);

  bool square() const { return width == height; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const Image&) const = default;
};

/// Reads binary (P5) or ASCII (P2) PGM with maxval <= 255.
/// Throws DataError on malformed or unsupported files.
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& image);

/// Bilinear resampling (pixel-center aligned).
Image resize_bilinear(const Image& src, int width, int height);

Image crop(const Image& src, int x0, int y0, int width, int height);
Image center_crop(const Image& src, int side);

}  // namespace rnc
