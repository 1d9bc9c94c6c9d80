#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "matchinggan/errors.hpp"
#include "matchinggan/tensor.hpp"

// Lossless raster I/O through libpng's simplified API, plus the affine pixel
// mapping between [0, 255] and [-1, 1].

namespace mgan {

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;            // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

inline RawImage read_png(const std::filesystem::path& path, int channels) {
  if (channels != 1 && channels != 3) throw UsageError("read_png: channels must be 1 or 3");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw DataError("cannot decode image " + path.string() + ": " + img.message);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  RawImage out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode image " + path.string() + ": " + msg);
  }
  return out;
}

inline bool png_decodes(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) return false;
  png_image_free(&img);
  return true;
}

inline void write_png(const std::filesystem::path& path, const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) throw UsageError("write_png: channels must be 1 or 3");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, image.pixels.data(), 0, nullptr))
    throw DataError("cannot write image " + path.string() + ": " + img.message);
}

// [0, 255] -> [-1, 1]
inline double normalize_pixel(double raw) {
  if (!(raw >= 0.0 && raw <= 255.0)) throw DataError("raw pixel value " + std::to_string(raw) + " outside [0, 255]");
  return raw / 127.5 - 1.0;
}

// [-1, 1] -> [0, 255], rounded and clamped.
inline std::uint8_t denormalize_pixel(double v) {
  const double raw = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(raw, 0.0, 255.0));
}

// Area-averaging resize of an interleaved 8-bit image to size x size, then
// normalization into a [C, size, size] tensor.
inline Tensor<float> to_tensor(const RawImage& img, int size) {
  const int c = img.channels;
  Tensor<float> out({c, size, size});
  const double sy = static_cast<double>(img.height) / size, sx = static_cast<double>(img.width) / size;
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < size; ++oy)
      for (int ox = 0; ox < size; ++ox) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy, x0 = ox * sx, x1 = (ox + 1) * sx;
        double acc = 0, area = 0;
        for (int iy = static_cast<int>(y0); iy < std::min(img.height, static_cast<int>(std::ceil(y1))); ++iy) {
          const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          for (int ix = static_cast<int>(x0); ix < std::min(img.width, static_cast<int>(std::ceil(x1))); ++ix) {
            const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            acc += wy * wx * img.pixels[(static_cast<std::size_t>(iy) * img.width + ix) * c + ch];
            area += wy * wx;
          }
        }
        out[(static_cast<std::size_t>(ch) * size + oy) * size + ox] = static_cast<float>(normalize_pixel(acc / area));
      }
  return out;
}

// [C, H, W] tensor in [-1, 1] -> 8-bit image.
template <class T>
RawImage from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    throw ShapeError("from_tensor: expected [1|3, H, W], got " + shape_str(t.shape()));
  RawImage img;
  img.channels = t.dim(0);
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(t.size());
  for (int ch = 0; ch < img.channels; ++ch)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + ch] =
            denormalize_pixel(t[(static_cast<std::size_t>(ch) * img.height + y) * img.width + x]);
  return img;
}

inline Tensor<float> load_image(const std::filesystem::path& path, int channels, int size) {
  return to_tensor(read_png(path, channels), size);
}

// Tiles equally sized [C, H, W] images into a rows x cols sheet with a
// one-pixel gap.
template <class T>
RawImage contact_sheet(const std::vector<Tensor<T>>& tiles, int cols) {
  if (tiles.empty() || cols < 1) throw UsageError("contact_sheet: nothing to lay out");
  const int c = tiles[0].dim(0), h = tiles[0].dim(1), w = tiles[0].dim(2);
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  RawImage sheet;
  sheet.channels = c;
  sheet.width = cols * (w + 1) - 1;
  sheet.height = rows * (h + 1) - 1;
  sheet.pixels.assign(static_cast<std::size_t>(sheet.width) * sheet.height * c, 128);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto tile = from_tensor(tiles[t]);
    const int oy = static_cast<int>(t) / cols * (h + 1), ox = static_cast<int>(t) % cols * (w + 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          sheet.pixels[(static_cast<std::size_t>(oy + y) * sheet.width + ox + x) * c + ch] =
              tile.pixels[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  return sheet;
}

}  // namespace mgan
