#pragma once

// Desk-scale evaluation metrics: SSIM, background mean absolute difference
// (reported as BG-MAD) and latent mean squared error.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "visctrl/error.hpp"
#include "visctrl/image.hpp"
#include "visctrl/numerics.hpp"

namespace visctrl {

inline constexpr std::size_t kSsimWindow = 8;
inline constexpr double kSsimC1 = (0.01 * 255.0) * (0.01 * 255.0);
inline constexpr double kSsimC2 = (0.03 * 255.0) * (0.03 * 255.0);

// Luma on the 8-bit scale.
inline std::vector<double> luma255(const Image& img) {
  if (img.c() != 3) throw ShapeError("luma255: expected an RGB image");
  std::vector<double> g(img.h() * img.w());
  for (std::size_t y = 0; y < img.h(); ++y)
    for (std::size_t x = 0; x < img.w(); ++x)
      g[y * img.w() + x] =
          255.0 * (0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2));
  return g;
}

// Mean SSIM over all 8x8 windows at stride 1, population statistics.
// Window sums come from summed-area tables.
inline double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("ssim: shape " + a.shape_string() + " vs " + b.shape_string());
  const std::size_t h = a.h(), w = a.w(), n = kSsimWindow;
  if (h < n || w < n) throw InputError("ssim: image smaller than the 8x8 window");
  const auto ga = luma255(a);
  const auto gb = luma255(b);

  const std::size_t W = w + 1;
  std::vector<double> sa((h + 1) * W), sb(sa.size()), saa(sa.size()), sbb(sa.size()), sab(sa.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double va = ga[y * w + x], vb = gb[y * w + x];
      const std::size_t i = (y + 1) * W + (x + 1);
      auto acc = [&](std::vector<double>& s, double v) { s[i] = v + s[i - 1] + s[i - W] - s[i - W - 1]; };
      acc(sa, va);
      acc(sb, vb);
      acc(saa, va * va);
      acc(sbb, vb * vb);
      acc(sab, va * vb);
    }
  auto box = [&](const std::vector<double>& s, std::size_t y, std::size_t x) {
    return s[(y + n) * W + (x + n)] - s[y * W + (x + n)] - s[(y + n) * W + x] + s[y * W + x];
  };

  const double count = static_cast<double>(n * n);
  double total = 0.0;
  for (std::size_t y = 0; y + n <= h; ++y)
    for (std::size_t x = 0; x + n <= w; ++x) {
      const double mu_a = box(sa, y, x) / count;
      const double mu_b = box(sb, y, x) / count;
      const double var_a = box(saa, y, x) / count - mu_a * mu_a;
      const double var_b = box(sbb, y, x) / count - mu_b * mu_b;
      const double cov = box(sab, y, x) / count - mu_a * mu_b;
      total += ((2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2)) /
               ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
    }
  return total / static_cast<double>((h - n + 1) * (w - n + 1));
}

// Mean absolute difference over background (mask == 0) pixels, channels
// averaged per pixel. Zero when the mask covers the whole image.
inline double bg_error(const Image& a, const Image& b, const Mask& mask) {
  if (!a.same_shape(b)) throw ShapeError("bg_error: shape " + a.shape_string() + " vs " + b.shape_string());
  if (mask.h != a.h() || mask.w != a.w()) throw ShapeError("bg_error: mask does not match image");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < a.h(); ++y)
    for (std::size_t x = 0; x < a.w(); ++x) {
      if (mask.at(y, x)) continue;
      double px = 0.0;
      for (std::size_t c = 0; c < a.c(); ++c) px += std::abs(static_cast<double>(a.at(y, x, c)) - b.at(y, x, c));
      total += px / static_cast<double>(a.c());
      ++count;
    }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

// Largest absolute channel difference over background pixels.
inline double bg_max_error(const Image& a, const Image& b, const Mask& mask) {
  if (!a.same_shape(b)) throw ShapeError("bg_max_error: shape mismatch");
  if (mask.h != a.h() || mask.w != a.w()) throw ShapeError("bg_max_error: mask does not match image");
  double worst = 0.0;
  for (std::size_t y = 0; y < a.h(); ++y)
    for (std::size_t x = 0; x < a.w(); ++x) {
      if (mask.at(y, x)) continue;
      for (std::size_t c = 0; c < a.c(); ++c)
        worst = std::max(worst, std::abs(static_cast<double>(a.at(y, x, c)) - b.at(y, x, c)));
    }
  return worst;
}

inline double latent_mse(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) throw ShapeError("latent_mse: shape " + a.shape_string() + " vs " + b.shape_string());
  if (a.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    total += d * d;
  }
  return total / static_cast<double>(a.size());
}

// Mean squared latent distance restricted to subject cells of the latent mask.
// Auxiliary fidelity diagnostic; zero when the mask is empty.
inline double masked_latent_distance(const Tensor3& a, const Tensor3& b, const Mask& mask) {
  if (!a.same_shape(b)) throw ShapeError("masked_latent_distance: shape mismatch");
  if (mask.latent_h != a.h() || mask.latent_w != a.w()) throw ShapeError("masked_latent_distance: mask mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < a.h(); ++y)
    for (std::size_t x = 0; x < a.w(); ++x) {
      if (!mask.latent[y * a.w() + x]) continue;
      for (std::size_t c = 0; c < a.c(); ++c) {
        const double d = static_cast<double>(a.at(y, x, c)) - b.at(y, x, c);
        total += d * d;
        ++count;
      }
    }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

// Mean absolute difference between two images over pixels where either mask
// marks subject.
inline double edited_region_mad(const Image& a, const Image& b, const Mask& ma, const Mask& mb) {
  if (!a.same_shape(b)) throw ShapeError("edited_region_mad: shape mismatch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < a.h(); ++y)
    for (std::size_t x = 0; x < a.w(); ++x) {
      if (!ma.at(y, x) && !mb.at(y, x)) continue;
      double px = 0.0;
      for (std::size_t c = 0; c < a.c(); ++c) px += std::abs(static_cast<double>(a.at(y, x, c)) - b.at(y, x, c));
      total += px / static_cast<double>(a.c());
      ++count;
    }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace visctrl
