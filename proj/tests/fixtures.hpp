#pragma once

// Small synthetic scenes shared by the loop, FGS and CLI tests.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "visctrl/image.hpp"

namespace fixtures {

using visctrl::Image;
using visctrl::Mask;

// 64x64 image that is constant on every 8x8 patch; subject patches (rows
// and columns 2..5) take the subject colour.
inline Image patch_scene(std::uint64_t seed, float r, float g, float b) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  Image img(64, 64, 3);
  for (std::size_t py = 0; py < 8; ++py)
    for (std::size_t px = 0; px < 8; ++px) {
      const bool subject = py >= 2 && py < 6 && px >= 2 && px < 6;
      const float col[3] = {subject ? r : static_cast<float>(u(rng)), subject ? g : static_cast<float>(u(rng)),
                            subject ? b : static_cast<float>(u(rng))};
      for (std::size_t dy = 0; dy < 8; ++dy)
        for (std::size_t dx = 0; dx < 8; ++dx)
          for (std::size_t c = 0; c < 3; ++c) img.at(py * 8 + dy, px * 8 + dx, c) = col[c];
    }
  return img;
}

// Smooth, non patch-constant image with a disc subject.
inline Image disc_scene(double cx, double cy, double radius, float r, float g, float b) {
  Image img(64, 64, 3);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const double dx = x - cx, dy = y - cy;
      const bool inside = dx * dx + dy * dy <= radius * radius;
      img.at(y, x, 0) = inside ? r : static_cast<float>(0.2 + 0.6 * x / 64.0);
      img.at(y, x, 1) = inside ? g : static_cast<float>(0.3 + 0.4 * y / 64.0);
      img.at(y, x, 2) = inside ? b : 0.5f;
    }
  return img;
}

inline Mask disc_mask(double cx, double cy, double radius) {
  std::vector<std::uint8_t> bits(64 * 64);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const double dx = x - cx, dy = y - cy;
      bits[y * 64 + x] = dx * dx + dy * dy <= (radius + 2) * (radius + 2);
    }
  return visctrl::make_mask(64, 64, std::move(bits), 8);
}

inline Mask box_mask(std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
  std::vector<std::uint8_t> bits(64 * 64);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) bits[y * 64 + x] = 1;
  return visctrl::make_mask(64, 64, std::move(bits), 8);
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  visctrl::write_file_bytes(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::string read_text(const std::filesystem::path& p) {
  const auto b = visctrl::read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

}  // namespace fixtures
