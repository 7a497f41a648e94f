// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace soar {

/// 8-bit interleaved image, row-major, `channels` samples per pixel.
struct Image {
  int width{0};
  int height{0};
  int channels{1};
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0);

  bool empty() const noexcept { return width <= 0 || height <= 0; }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Integer pixel rectangle.
struct Rect {
  int x{0};
  int y{0};
  int w{0};
  int h{0};

  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Copies a sub-rectangle. Throws ContractError if it leaves the image.
Image crop(const Image& image, const Rect& rect);

/// Bilinear resampling with pixel-center alignment (edge samples clamped).
Image resize_bilinear(const Image& image, int new_width, int new_height);

/// Decodes to 8-bit gray (1 channel) or RGB (3 channels); alpha is composited
/// away by libpng. Throws IoError.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
/// Width and height from the PNG header without decoding pixel data.
std::pair<int, int> png_dimensions(const std::filesystem::path& path);

}  // namespace soar
