#pragma once

// 8-bit PNG I/O, quantisation and binary masks.
//
// Images are Tensor3 (h, w, 3) with values in [0, 1]; byte b maps to b/255
// and back through round-to-nearest, so unmodified pixels survive a
// load/save cycle exactly.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "visctrl/error.hpp"
#include "visctrl/numerics.hpp"
#include "visctrl/tensor_io.hpp"

namespace visctrl {

using Image = Tensor3;

struct Image8 {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image8&, const Image8&) = default;
};

inline std::uint8_t quantize(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

inline Image8 to_image8(const Image& img) {
  if (img.c() != 3 && img.c() != 1) throw ShapeError("to_image8: expected 1 or 3 channels");
  Image8 out{img.h(), img.w(), img.c(), std::vector<std::uint8_t>(img.size())};
  for (std::size_t i = 0; i < img.size(); ++i) out.pixels[i] = quantize(img.data()[i]);
  return out;
}

inline Image from_image8(const Image8& img) {
  std::vector<float> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.pixels[i] / 255.0);
  return Image(img.h, img.w, img.channels, std::move(v));
}

// Encodes to PNG in memory. Output bytes depend only on the pixels.
inline std::vector<std::uint8_t> encode_png(const Image8& img) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.w);
  pi.height = static_cast<png_uint_32>(img.h);
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (img.channels != 1 && img.channels != 3) throw ShapeError("encode_png: expected 1 or 3 channels");
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw IoError("encode_png: " + msg);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw IoError("encode_png: " + msg);
  }
  out.resize(size);
  return out;
}

inline Image8 decode_png(const std::vector<std::uint8_t>& bytes, std::size_t channels, const std::string& origin) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
    throw FormatError("PNG '" + origin + "': " + pi.message);
  }
  pi.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out{pi.height, pi.width, channels, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(pi))};
  if (!png_image_finish_read(&pi, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw FormatError("PNG '" + origin + "': " + msg);
  }
  return out;
}

inline Image8 read_png8(const std::filesystem::path& path, std::size_t channels) {
  return decode_png(read_file_bytes(path), channels, path.string());
}

inline Image read_png_rgb(const std::filesystem::path& path) { return from_image8(read_png8(path, 3)); }

inline void write_png(const std::filesystem::path& path, const Image8& img) { write_file_bytes(path, encode_png(img)); }

inline Image resize_bilinear(const Image& src, std::size_t h, std::size_t w) {
  if (src.h() == h && src.w() == w) return src;
  Image out(h, w, src.c());
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * src.h() / h - 0.5, 0.0, src.h() - 1.0);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, src.h() - 1);
    const double fy = sy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = std::clamp((static_cast<double>(x) + 0.5) * src.w() / w - 0.5, 0.0, src.w() - 1.0);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, src.w() - 1);
      const double fx = sx - x0;
      for (std::size_t c = 0; c < src.c(); ++c) {
        const double top = src.at(y0, x0, c) * (1 - fx) + src.at(y0, x1, c) * fx;
        const double bot = src.at(y1, x0, c) * (1 - fx) + src.at(y1, x1, c) * fx;
        out.at(y, x, c) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

// Binary subject mask at pixel and latent resolution. A latent cell is
// subject when any pixel of its patch is.
struct Mask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> pixels;  // 0 or 1
  std::size_t latent_h = 0, latent_w = 0;
  std::vector<std::uint8_t> latent;  // 0 or 1

  bool at(std::size_t y, std::size_t x) const { return pixels[y * w + x] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : pixels) n += v;
    return n;
  }
};

inline Mask make_mask(std::size_t h, std::size_t w, std::vector<std::uint8_t> bits, std::size_t patch) {
  if (bits.size() != h * w) throw ShapeError("make_mask: bit count does not match dimensions");
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("make_mask: " + std::to_string(h) + "x" + std::to_string(w) + " is not a multiple of patch " +
                     std::to_string(patch));
  }
  Mask m;
  m.h = h;
  m.w = w;
  for (auto& b : bits) b = b ? 1 : 0;
  m.pixels = std::move(bits);
  m.latent_h = h / patch;
  m.latent_w = w / patch;
  m.latent.assign(m.latent_h * m.latent_w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (m.pixels[y * w + x]) m.latent[(y / patch) * m.latent_w + x / patch] = 1;
  return m;
}

inline Mask uniform_mask(std::size_t h, std::size_t w, bool value, std::size_t patch) {
  return make_mask(h, w, std::vector<std::uint8_t>(h * w, value ? 1 : 0), patch);
}

// Gray >= 128 is subject.
inline Mask mask_from_image8(const Image8& g, std::size_t patch) {
  if (g.channels != 1) throw ShapeError("mask_from_image8: expected a single channel");
  std::vector<std::uint8_t> bits(g.pixels.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = g.pixels[i] >= 128 ? 1 : 0;
  return make_mask(g.h, g.w, std::move(bits), patch);
}

inline Mask read_mask_png(const std::filesystem::path& path, std::size_t patch) {
  return mask_from_image8(read_png8(path, 1), patch);
}

inline Image8 mask_to_image8(const Mask& m) {
  Image8 out{m.h, m.w, 1, std::vector<std::uint8_t>(m.pixels.size())};
  for (std::size_t i = 0; i < m.pixels.size(); ++i) out.pixels[i] = m.pixels[i] ? 255 : 0;
  return out;
}

}  // namespace visctrl
