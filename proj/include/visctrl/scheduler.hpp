#pragma once

// Noise schedule and deterministic DDIM stepping.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "visctrl/error.hpp"
#include "visctrl/numerics.hpp"

namespace visctrl {

struct NoiseSchedule {
  std::size_t t_train = 0;
  std::vector<double> alpha_bar;  // indexed 0..t_train, alpha_bar[0] == 1

  double operator[](std::size_t t) const { return alpha_bar.at(t); }
};

// Linear betas over steps 1..t_train; alpha_bar[t] is the running product of
// (1 - beta_s) for s <= t.
inline NoiseSchedule make_schedule(std::size_t t_train = 1000, double beta_start = 1e-4,
                                   double beta_end = 0.02) {
  if (t_train < 1) throw ConfigError("make_schedule: t_train must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1 (got " +
                      std::to_string(beta_start) + ", " + std::to_string(beta_end) + ")");
  }
  NoiseSchedule s;
  s.t_train = t_train;
  s.alpha_bar.resize(t_train + 1);
  s.alpha_bar[0] = 1.0;
  double prod = 1.0;
  for (std::size_t t = 1; t <= t_train; ++t) {
    const double beta =
        t_train == 1 ? beta_start
                     : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) /
                                        static_cast<double>(t_train - 1);
    prod *= 1.0 - beta;
    s.alpha_bar[t] = prod;
  }
  return s;
}

// Inference grid: indices[i] = floor(i * t_train / T) for i = 0..T.
struct StepGrid {
  std::size_t t_infer = 0;
  std::vector<std::size_t> indices;

  std::size_t steps() const noexcept { return t_infer; }
};

inline StepGrid make_grid(std::size_t t_infer, std::size_t t_train) {
  if (t_infer < 1) throw ConfigError("make_grid: T must be >= 1");
  if (t_infer > t_train) {
    throw ConfigError("make_grid: T=" + std::to_string(t_infer) + " exceeds the training grid size " +
                      std::to_string(t_train));
  }
  StepGrid g;
  g.t_infer = t_infer;
  g.indices.resize(t_infer + 1);
  for (std::size_t i = 0; i <= t_infer; ++i) g.indices[i] = i * t_train / t_infer;
  return g;
}

namespace detail {

inline void check_abar(double abar, const char* where) {
  if (!(abar > 0.0) || abar > 1.0) {
    throw DomainError(std::string(where) + ": alpha_bar must lie in (0, 1], got " + std::to_string(abar));
  }
}

inline void check_pair(const Tensor3& a, const Tensor3& b, const char* where) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(where) + ": shape " + a.shape_string() + " vs " + b.shape_string());
  }
}

// sqrt(abar_to) * f(z, eps) + sqrt(1 - abar_to) * eps, where f is the
// denoised-latent estimate. Evaluated in double, rounded once.
inline Tensor3 ddim_move(const Tensor3& z, const Tensor3& eps, double abar_from, double abar_to,
                         const char* where) {
  check_abar(abar_from, where);
  check_abar(abar_to, where);
  check_pair(z, eps, where);
  const double sa = std::sqrt(abar_from);
  const double sn = std::sqrt(1.0 - abar_from);
  const double ta = std::sqrt(abar_to);
  const double tn = std::sqrt(1.0 - abar_to);
  Tensor3 out(z.h(), z.w(), z.c());
  const auto zs = z.data();
  const auto es = eps.data();
  auto os = out.data();
  for (std::size_t i = 0; i < zs.size(); ++i) {
    const double e = es[i];
    const double z0 = (zs[i] - sn * e) / sa;
    os[i] = static_cast<float>(ta * z0 + tn * e);
  }
  require_finite(out.data(), where);
  return out;
}

}  // namespace detail

// (z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)
inline Tensor3 predict_z0(const Tensor3& z_t, const Tensor3& eps, double abar_t) {
  detail::check_abar(abar_t, "predict_z0");
  detail::check_pair(z_t, eps, "predict_z0");
  const double sa = std::sqrt(abar_t);
  const double sn = std::sqrt(1.0 - abar_t);
  Tensor3 out(z_t.h(), z_t.w(), z_t.c());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<float>((z_t.data()[i] - sn * eps.data()[i]) / sa);
  }
  detail::require_finite(out.data(), "predict_z0");
  return out;
}

// One inversion step toward higher noise, with eps evaluated at z_t.
inline Tensor3 ddim_invert_step(const Tensor3& z_t, const Tensor3& eps, double abar_t, double abar_next) {
  return detail::ddim_move(z_t, eps, abar_t, abar_next, "ddim_invert_step");
}

inline Tensor3 ddim_denoise_step(const Tensor3& z_t, const Tensor3& eps, double abar_t, double abar_prev) {
  return detail::ddim_move(z_t, eps, abar_t, abar_prev, "ddim_denoise_step");
}

// eps_uncond + omega * (eps_cond - eps_uncond); the endpoints are returned as
// exact copies.
inline Tensor3 cfg_combine(const Tensor3& eps_cond, const Tensor3& eps_uncond, double omega) {
  detail::check_pair(eps_cond, eps_uncond, "cfg_combine");
  if (omega == 1.0) return eps_cond;
  if (omega == 0.0) return eps_uncond;
  Tensor3 out(eps_cond.h(), eps_cond.w(), eps_cond.c());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = eps_uncond.data()[i];
    const double c = eps_cond.data()[i];
    out.data()[i] = static_cast<float>(u + omega * (c - u));
  }
  detail::require_finite(out.data(), "cfg_combine");
  return out;
}

}  // namespace visctrl
