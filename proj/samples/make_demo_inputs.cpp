// Writes a small synthetic scene set for the sample configs: a reference
// and a target image, a subject mask, and a three-frame sequence with masks.
//
//   make_demo_inputs <dir>

#include <cmath>
#include <filesystem>
#include <iostream>

#include "visctrl/image.hpp"

namespace fs = std::filesystem;
using visctrl::Image;

namespace {

constexpr std::size_t kSize = 64;

// Soft background gradient with a disc "subject" of the given colour.
Image scene(float r, float g, float b, double cx, double cy, double radius) {
  Image img(kSize, kSize, 3);
  for (std::size_t y = 0; y < kSize; ++y)
    for (std::size_t x = 0; x < kSize; ++x) {
      const bool inside = std::hypot(x - cx, y - cy) <= radius;
      const float bg = 0.25f + 0.5f * static_cast<float>(y) / kSize;
      img.at(y, x, 0) = inside ? r : bg;
      img.at(y, x, 1) = inside ? g : 0.6f;
      img.at(y, x, 2) = inside ? b : 1.0f - bg;
    }
  return img;
}

visctrl::Mask disc_mask(double cx, double cy, double radius) {
  std::vector<std::uint8_t> bits(kSize * kSize);
  for (std::size_t y = 0; y < kSize; ++y)
    for (std::size_t x = 0; x < kSize; ++x) bits[y * kSize + x] = std::hypot(x - cx, y - cy) <= radius + 2;
  return visctrl::make_mask(kSize, kSize, std::move(bits), 8);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_demo_inputs <dir>\n";
    return 2;
  }
  const fs::path dir = argv[1];
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "masks");
  try {
    visctrl::write_png(dir / "reference.png", visctrl::to_image8(scene(0.9f, 0.2f, 0.1f, 30, 34, 14)));
    visctrl::write_png(dir / "target.png", visctrl::to_image8(scene(0.2f, 0.3f, 0.9f, 32, 32, 12)));
    visctrl::write_png(dir / "mask.png", visctrl::mask_to_image8(disc_mask(32, 32, 12)));
    for (int f = 0; f < 3; ++f) {
      const double cx = 24 + 8 * f;
      char name[32];
      std::snprintf(name, sizeof name, "frame_%04d.png", f);
      visctrl::write_png(dir / "frames" / name, visctrl::to_image8(scene(0.2f, 0.3f, 0.9f, cx, 32, 12)));
      visctrl::write_png(dir / "masks" / name, visctrl::mask_to_image8(disc_mask(cx, 32, 12)));
    }
  } catch (const visctrl::Error& e) {
    std::cerr << "error code=" << visctrl::to_string(e.code()) << " message=\"" << e.what() << "\"\n";
    return 1;
  }
  std::cout << "wrote demo inputs to " << dir.string() << "\n";
  return 0;
}
