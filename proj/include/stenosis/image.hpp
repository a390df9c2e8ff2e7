// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stenosis {

/// Row-major single-channel image.
template <typename T>
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<T> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, T fill = T{}) : width(w), height(h), pixels(w * h, fill) {}

  T& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  const T& at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
  bool empty() const noexcept { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

using ImageU8 = Image<std::uint8_t>;
using ImageF = Image<double>;

struct ImageRgb {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

ImageF to_float(const ImageU8& img);
ImageU8 to_u8(const ImageF& img);  // rounds and clamps to [0, 255]

/// 8-bit grayscale PNG. Color inputs are converted to luma on read.
ImageU8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const ImageU8& img);
void write_png(const std::filesystem::path& path, const ImageRgb& img);
std::string encode_png(const ImageU8& img);

}  // namespace stenosis
