// SPDX-License-Identifier: Apache-2.0
#include "stenosis/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "stenosis/errors.hpp"

namespace stenosis {

ImageF to_float(const ImageU8& img) {
  ImageF out(img.width, img.height);
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  return out;
}

ImageU8 to_u8(const ImageF& img) {
  ImageU8 out(img.width, img.height);
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  });
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors through longjmp unless we throw from the handler.
[[noreturn]] void png_throw(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void png_quiet(png_structp, png_const_charp) {}

class PngWriter {
 public:
  PngWriter() {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_quiet);
    if (!png_) throw std::runtime_error("png: cannot allocate writer");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_write_struct(&png_, nullptr);
      throw std::runtime_error("png: cannot allocate info");
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  void write(std::size_t w, std::size_t h, int color, int channels, const std::uint8_t* data) {
    png_set_IHDR(png_, info_, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png_, info_);
    for (std::size_t y = 0; y < h; ++y) {
      png_write_row(png_, const_cast<png_bytep>(data + y * w * static_cast<std::size_t>(channels)));
    }
    png_write_end(png_, nullptr);
  }

  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

void write_any(const std::filesystem::path& path, std::size_t w, std::size_t h, int color,
               int channels, const std::uint8_t* data) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("png: cannot open " + path.string() + " for writing");
  PngWriter writer;
  png_init_io(writer.png_, f.get());
  writer.write(w, h, color, channels, data);
}

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), len);
}

}  // namespace

ImageU8 read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw NotFoundError("png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_throw, png_quiet);
  if (!png) throw std::runtime_error("png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  if (!info) throw std::runtime_error("png: cannot allocate info");

  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);

  ImageU8 img(png_get_image_width(png, info), png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != img.width) throw std::runtime_error("png: unexpected row layout");
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const ImageU8& img) {
  write_any(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, 1, img.pixels.data());
}

void write_png(const std::filesystem::path& path, const ImageRgb& img) {
  write_any(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 3, img.pixels.data());
}

std::string encode_png(const ImageU8& img) {
  std::string out;
  PngWriter writer;
  png_set_write_fn(writer.png_, &out, append_bytes, nullptr);
  writer.write(img.width, img.height, PNG_COLOR_TYPE_GRAY, 1, img.pixels.data());
  return out;
}

}  // namespace stenosis
