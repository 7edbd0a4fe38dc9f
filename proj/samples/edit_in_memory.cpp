// Library usage without the CLI: seeded weights, two synthetic images, one
// VisCtrl edit, and a short summary of the iteration series.

#include <cstdio>

#include "visctrl/visctrl.hpp"

int main() {
  visctrl::DenoiserConfig dc;
  dc.seed = 7;
  const visctrl::Weights w = visctrl::init_weights(dc);

  const std::size_t n = dc.image_h();
  visctrl::Image reference(n, n, 3), target(n, n, 3);
  std::vector<std::uint8_t> bits(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const bool subject = y >= 16 && y < 48 && x >= 16 && x < 48;
      bits[y * n + x] = subject;
      for (std::size_t c = 0; c < 3; ++c) {
        const float bg = 0.3f + 0.4f * static_cast<float>(x) / n;
        reference.at(y, x, c) = subject ? (c == 0 ? 0.9f : 0.1f) : bg;
        target.at(y, x, c) = subject ? (c == 2 ? 0.9f : 0.2f) : bg;
      }
    }

  visctrl::EditInputs in{reference, target, "a red cube", "a cube on a table",
                         visctrl::make_mask(n, n, bits, dc.patch)};
  visctrl::EditConfig cfg;  // T=5, N=5, omega=6, S=L=0
  const auto res = visctrl::run_visctrl(w, in, cfg);

  for (const auto& it : res.loop.iterations)
    std::printf("iter %zu  latent mse to previous %.6g  injected pairs %zu\n", it.n, it.latent_mse_prev,
                it.injected_pairs);
  std::printf("evaluations %zu (expected %zu), forward calls %zu\n", res.counter.evaluations,
              visctrl::expected_evaluations(cfg), res.counter.forward_calls);
  std::printf("background error %.3g, ssim %.4f\n", visctrl::bg_error(res.edited, target, in.mask),
              visctrl::ssim(res.edited, target));
  return 0;
}
