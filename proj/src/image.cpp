// SPDX-License-Identifier: Apache-2.0

#include "soar/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

#include "soar/errors.hpp"

namespace soar {

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c),
      pixels(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0) * std::max(c, 0), fill) {}

Image crop(const Image& image, const Rect& rect) {
  if (rect.w <= 0 || rect.h <= 0 || rect.x < 0 || rect.y < 0 || rect.x + rect.w > image.width ||
      rect.y + rect.h > image.height) {
    throw ContractError("crop: rectangle outside image bounds");
  }
  Image out(rect.w, rect.h, image.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(rect.w) * image.channels;
  for (int y = 0; y < rect.h; ++y) {
    const auto* src = &image.pixels[(static_cast<std::size_t>(rect.y + y) * image.width + rect.x) *
                                    image.channels];
    std::copy(src, src + row_bytes, &out.pixels[static_cast<std::size_t>(y) * row_bytes]);
  }
  return out;
}

Image resize_bilinear(const Image& image, int new_width, int new_height) {
  if (image.empty() || new_width <= 0 || new_height <= 0) {
    throw ContractError("resize_bilinear: empty source or target");
  }
  if (new_width == image.width && new_height == image.height) return image;
  Image out(new_width, new_height, image.channels);
  const double sx = static_cast<double>(image.width) / new_width;
  const double sy = static_cast<double>(image.height) / new_height;
  for (int y = 0; y < new_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(x0, y0, c) * (1 - wx) + image.at(x1, y0, c) * wx;
        const double bottom = image.at(x0, y1, c) * (1 - wx) + image.at(x1, y1, c) * wx;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top * (1 - wy) + bottom * wy));
      }
    }
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

// Frees libpng's simplified-API state on every exit path.
struct PngImage {
  png_image image{};
  PngImage() { image.version = PNG_IMAGE_VERSION; }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

}  // namespace

Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("cannot open " + path.string());
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    throw IoError(path.string() + ": " + png.image.message);
  }
  const bool color = (png.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image out(static_cast<int>(png.image.width), static_cast<int>(png.image.height), color ? 3 : 1);
  if (!png_image_finish_read(&png.image, nullptr, out.pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + png.image.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.empty() || (image.channels != 1 && image.channels != 3)) {
    throw ContractError("write_png: only non-empty gray or RGB images are supported");
  }
  PngImage png;
  png.image.width = static_cast<png_uint_32>(image.width);
  png.image.height = static_cast<png_uint_32>(image.height);
  png.image.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + png.image.message);
  }
}

std::pair<int, int> png_dimensions(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  // signature (8) + IHDR length (4) + "IHDR" (4) + width (4) + height (4)
  unsigned char header[24];
  png_byte sig[8];
  if (std::fread(header, 1, 24, file.get()) != 24) throw IoError(path.string() + ": truncated PNG");
  std::copy(header, header + 8, sig);
  if (png_sig_cmp(sig, 0, 8) != 0 || std::string(header + 12, header + 16) != "IHDR") {
    throw IoError(path.string() + ": not a PNG file");
  }
  auto be32 = [&](int offset) {
    return (static_cast<std::uint32_t>(header[offset]) << 24) |
           (static_cast<std::uint32_t>(header[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(header[offset + 2]) << 8) | header[offset + 3];
  };
  return {static_cast<int>(be32(16)), static_cast<int>(be32(20))};
}

}  // namespace soar
