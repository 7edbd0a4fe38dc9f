#pragma once

// Iterative self-attention control.
//
// Reference branch: invert E(I_s), then denoise it under C_s while capturing
// self-attention K/V from the conditional forward. The capture is cached per
// step count and reused by every iteration.
//
// Target branch, iteration n = 1..N:
//   Z_T = invert(Z*)                        (FGS: blended, see fgs.hpp)
//   Z_0 = guided denoise of Z_T under C_t, conditional forward receiving the
//         reference K/V wherever the edit gate is open
//   Z*  = Z_0
// with Z* initialised to E(I_t). The final Z_0 is decoded and composited over
// the target with the subject mask.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "visctrl/attn_control.hpp"
#include "visctrl/denoiser.hpp"
#include "visctrl/error.hpp"
#include "visctrl/image.hpp"
#include "visctrl/metrics.hpp"
#include "visctrl/numerics.hpp"
#include "visctrl/scheduler.hpp"

namespace visctrl {

enum class InvertCondition { Unconditional, Conditional };

struct EditConfig {
  std::size_t steps = 5;        // T
  std::size_t first_steps = 0;  // steps for iteration 1; 0 means T
  std::size_t iterations = 5;   // N
  EditGate gate{0, 0};
  double omega = 6.0;
  double alpha = 1.0;  // FGS coefficient
  std::uint64_t sampler_seed = 0;
  bool frame_keyed_sampler = true;
  InvertCondition invert_condition = InvertCondition::Unconditional;
  bool inject = true;               // false runs every hook in pass-through mode
  bool latent_blend = false;        // diagnostic: per-step latent mask blending
  bool recompute_reference = false; // re-capture the reference every iteration
  bool record_attention = false;

  std::size_t steps_for(std::size_t iteration) const {
    return iteration == 1 && first_steps != 0 ? first_steps : steps;
  }

  void validate(std::size_t l_max, std::size_t t_train) const {
    if (steps < 1) throw ConfigError("edit config: steps must be >= 1");
    if (iterations < 1) throw ConfigError("edit config: iterations must be >= 1");
    if (!(omega >= 0.0)) throw ConfigError("edit config: omega must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("edit config: alpha must lie in [0, 1]");
    if (steps > t_train || steps_for(1) > t_train) throw ConfigError("edit config: steps exceed the training grid");
    gate.validate(steps, l_max);
  }
};

// Denoiser evaluations. A guided step (conditional + unconditional forward)
// counts as one evaluation, as does each inversion step; `forward_calls`
// counts raw forward passes.
struct CallCounter {
  std::size_t evaluations = 0;
  std::size_t inversion_evals = 0;
  std::size_t guided_evals = 0;
  std::size_t capture_evals = 0;
  std::size_t forward_calls = 0;

  CallCounter& operator+=(const CallCounter& o) {
    evaluations += o.evaluations;
    inversion_evals += o.inversion_evals;
    guided_evals += o.guided_evals;
    capture_evals += o.capture_evals;
    forward_calls += o.forward_calls;
    return *this;
  }
};

// Stateless apart from the call counter; one per thread.
class Engine {
 public:
  explicit Engine(const Weights& w) : weights_(&w), null_(null_prompt(w.cfg)) {}

  const Weights& weights() const noexcept { return *weights_; }
  const NoiseSchedule& schedule() const noexcept { return weights_->schedule; }
  const PromptEmbedding& null() const noexcept { return null_; }
  CallCounter& counter() noexcept { return counter_; }
  const CallCounter& counter() const noexcept { return counter_; }

  StepGrid grid(std::size_t steps) const { return make_grid(steps, schedule().t_train); }

  PromptEmbedding embed(std::string_view prompt) const { return embed_prompt(prompt, weights_->cfg); }

  Tensor3 eps(const Tensor3& z, std::size_t t, const PromptEmbedding& c, SelfAttentionHook* hook = nullptr) {
    ++counter_.forward_calls;
    return forward(z, t, c, *weights_, hook);
  }

  const PromptEmbedding& inversion_context(const PromptEmbedding& c, InvertCondition cond) const {
    return cond == InvertCondition::Conditional ? c : null_;
  }

  // Ascending DDIM inversion, unguided. `trajectory`, when given, receives
  // z at every grid position 0..T.
  Tensor3 invert_latent(const Tensor3& z0, const PromptEmbedding& c, const StepGrid& grid, InvertCondition cond,
                        std::vector<Tensor3>* trajectory = nullptr) {
    const auto& ctx = inversion_context(c, cond);
    Tensor3 z = z0;
    if (trajectory) {
      trajectory->clear();
      trajectory->push_back(z);
    }
    for (std::size_t i = 0; i < grid.steps(); ++i) {
      const std::size_t t = grid.indices[i];
      const std::size_t t_next = grid.indices[i + 1];
      const Tensor3 e = eps(z, t, ctx);
      ++counter_.evaluations;
      ++counter_.inversion_evals;
      z = ddim_invert_step(z, e, schedule()[t], schedule()[t_next]);
      if (trajectory) trajectory->push_back(z);
    }
    return z;
  }

  // One descending guided step from grid position i to i-1. The hook, if
  // any, sees only the conditional forward.
  Tensor3 guided_step(const Tensor3& z, std::size_t i, const StepGrid& grid, const PromptEmbedding& c, double omega,
                      HookSet* cond_hook) {
    const std::size_t t = grid.indices[i];
    const std::size_t t_prev = grid.indices[i - 1];
    if (cond_hook) cond_hook->set_step(i);
    const Tensor3 e_cond = eps(z, t, c, cond_hook);
    const Tensor3 e_uncond = eps(z, t, null_);
    ++counter_.evaluations;
    ++counter_.guided_evals;
    if (cond_hook && cond_hook->mode() == HookMode::Capture) ++counter_.capture_evals;
    return ddim_denoise_step(z, cfg_combine(e_cond, e_uncond, omega), schedule()[t], schedule()[t_prev]);
  }

  // Descending guided denoising from grid position T to 0. With `blend`, the
  // latent is pulled back to `blend->trajectory` outside the latent mask
  // after every step.
  struct LatentBlend {
    const std::vector<Tensor3>* trajectory;
    const Mask* mask;
  };

  Tensor3 denoise(const Tensor3& z_T, const PromptEmbedding& c, const StepGrid& grid, double omega,
                  HookSet* cond_hook, const LatentBlend* blend = nullptr) {
    Tensor3 z = z_T;
    for (std::size_t i = grid.steps(); i >= 1; --i) {
      z = guided_step(z, i, grid, c, omega, cond_hook);
      if (blend) apply_blend(z, (*blend->trajectory)[i - 1], *blend->mask);
    }
    return z;
  }

  // Invert then denoise with the same unguided epsilon, no hooks.
  Tensor3 reconstruct_latent(const Tensor3& z0, const PromptEmbedding& c, const StepGrid& grid, InvertCondition cond) {
    const auto& ctx = inversion_context(c, cond);
    Tensor3 z = invert_latent(z0, c, grid, cond);
    for (std::size_t i = grid.steps(); i >= 1; --i) {
      const std::size_t t = grid.indices[i];
      const Tensor3 e = eps(z, t, ctx);
      ++counter_.evaluations;
      z = ddim_denoise_step(z, e, schedule()[t], schedule()[grid.indices[i - 1]]);
    }
    return z;
  }

  static void apply_blend(Tensor3& z, const Tensor3& keep, const Mask& mask) {
    if (!z.same_shape(keep) || mask.latent_h != z.h() || mask.latent_w != z.w()) {
      throw ShapeError("latent blend: mask/latent shape mismatch");
    }
    for (std::size_t y = 0; y < z.h(); ++y)
      for (std::size_t x = 0; x < z.w(); ++x)
        if (!mask.latent[y * z.w() + x])
          for (std::size_t c = 0; c < z.c(); ++c) z.at(y, x, c) = keep.at(y, x, c);
  }

 private:
  const Weights* weights_;
  PromptEmbedding null_;
  CallCounter counter_;
};

// ---------------------------------------------------------------------------
// Reference branch

struct ReferenceBranch {
  StepGrid grid;
  Tensor3 z_T;
  Tensor3 reconstruction;  // denoised reference latent
  KVStore store;
};

inline ReferenceBranch capture_reference(Engine& engine, const Tensor3& z0, const PromptEmbedding& c_s,
                                         const StepGrid& grid, const EditConfig& cfg) {
  ReferenceBranch ref;
  ref.grid = grid;
  ref.z_T = engine.invert_latent(z0, c_s, grid, cfg.invert_condition);
  HookSet capture = HookSet::capture(ref.store);
  ref.reconstruction = engine.denoise(ref.z_T, c_s, grid, cfg.omega, &capture);
  return ref;
}

// One reference image: its latent, prompt, and captured branches per step
// count. `prepare` fills the cache; afterwards `branch` is read-only and
// safe to share across threads.
class Reference {
 public:
  Reference(Tensor3 z0, PromptEmbedding c_s) : z0_(std::move(z0)), c_s_(std::move(c_s)) {}

  const Tensor3& latent() const noexcept { return z0_; }
  const PromptEmbedding& prompt() const noexcept { return c_s_; }

  void prepare(Engine& engine, const EditConfig& cfg) {
    for (std::size_t steps : {cfg.steps_for(1), cfg.steps}) {
      if (!branches_.count(steps)) branches_.emplace(steps, capture_reference(engine, z0_, c_s_, engine.grid(steps), cfg));
    }
  }

  const ReferenceBranch& branch(std::size_t steps) const {
    auto it = branches_.find(steps);
    if (it == branches_.end()) {
      throw InjectionError("reference has no capture for T=" + std::to_string(steps) + "; call prepare first");
    }
    return it->second;
  }

 private:
  Tensor3 z0_;
  PromptEmbedding c_s_;
  std::map<std::size_t, ReferenceBranch> branches_;
};

// ---------------------------------------------------------------------------
// Iteration loop

struct IterationRecord {
  std::size_t n = 0;
  std::size_t reference_index = 0;
  Tensor3 z_star_in;  // latent inverted in this iteration
  Tensor3 inverted;   // invert(z_star_in)
  Tensor3 z_T;        // noise actually denoised (differs from `inverted` under FGS)
  Tensor3 z0;         // denoised result; becomes the next z_star_in
  double latent_mse_prev = 0.0;  // mse(z0, z_star_in)
  std::size_t injected_pairs = 0;
};

struct LoopResult {
  Tensor3 z0;
  std::vector<IterationRecord> iterations;
  std::map<AttentionMapKey, Matrix> attention_maps;
};

using ReferenceSelector = std::function<std::size_t(std::size_t iteration)>;

// z_T_prev * (1 - alpha) + inverted * alpha, with the endpoints returned as
// exact copies.
inline Tensor3 blend_noise(const Tensor3& z_T_prev, const Tensor3& inverted, double alpha) {
  if (!z_T_prev.same_shape(inverted)) throw ShapeError("blend_noise: shape mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("blend_noise: alpha must lie in [0, 1]");
  if (alpha == 1.0) return inverted;
  if (alpha == 0.0) return z_T_prev;
  Tensor3 out(inverted.h(), inverted.w(), inverted.c());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<float>(alpha * inverted.data()[i] + (1.0 - alpha) * z_T_prev.data()[i]);
  }
  return out;
}

// Shared driver for single-reference editing and FGS. With `fgs`, iterations
// n >= 2 blend the fresh inversion with the previous Z_T using cfg.alpha.
inline LoopResult run_edit_loop(Engine& engine, const Tensor3& z_target, const PromptEmbedding& c_t,
                                const std::vector<const Reference*>& refs, const ReferenceSelector& select,
                                const EditConfig& cfg, bool fgs, const Mask* latent_blend_mask = nullptr) {
  if (refs.empty()) throw InputError("edit loop: no reference");
  cfg.validate(engine.weights().cfg.blocks, engine.weights().cfg.t_train);
  LoopResult result;
  Tensor3 z_star = z_target;
  Tensor3 z_T_prev;
  for (std::size_t n = 1; n <= cfg.iterations; ++n) {
    const std::size_t steps = cfg.steps_for(n);
    const StepGrid grid = engine.grid(steps);
    const std::size_t ref_index = select(n);
    if (ref_index >= refs.size()) throw InputError("edit loop: reference index out of range");

    std::optional<ReferenceBranch> fresh;
    const ReferenceBranch* branch = nullptr;
    if (cfg.recompute_reference) {
      const Reference& r = *refs[ref_index];
      fresh = capture_reference(engine, r.latent(), r.prompt(), grid, cfg);
      branch = &*fresh;
    } else {
      branch = &refs[ref_index]->branch(steps);
    }

    IterationRecord rec;
    rec.n = n;
    rec.reference_index = ref_index;
    rec.z_star_in = z_star;
    std::vector<Tensor3> trajectory;
    rec.inverted = engine.invert_latent(z_star, c_t, grid, cfg.invert_condition,
                                        latent_blend_mask ? &trajectory : nullptr);
    rec.z_T = (fgs && n >= 2) ? blend_noise(z_T_prev, rec.inverted, cfg.alpha) : rec.inverted;

    HookSet hooks = cfg.inject ? HookSet::inject(branch->store, cfg.gate) : HookSet{};
    hooks.set_iteration(n);
    hooks.record_maps(cfg.record_attention);
    Engine::LatentBlend blend{&trajectory, latent_blend_mask};
    rec.z0 = engine.denoise(rec.z_T, c_t, grid, cfg.omega, &hooks, latent_blend_mask ? &blend : nullptr);
    rec.latent_mse_prev = latent_mse(rec.z0, rec.z_star_in);
    rec.injected_pairs = hooks.injected().size();
    for (const auto& [k, m] : hooks.maps()) result.attention_maps[k] = m;

    z_star = rec.z0;
    z_T_prev = rec.z_T;
    result.iterations.push_back(std::move(rec));
  }
  result.z0 = z_star;
  return result;
}

// ---------------------------------------------------------------------------
// Compositing and the single-image entry point

// mask * edited + (1 - mask) * source, as an exact per-pixel select.
inline Image composite(const Image& edited, const Image& source, const Mask& mask) {
  if (!edited.same_shape(source)) {
    throw ShapeError("composite: edited " + edited.shape_string() + " vs source " + source.shape_string());
  }
  if (mask.h != source.h() || mask.w != source.w()) throw ShapeError("composite: mask does not match image");
  Image out = source;
  for (std::size_t y = 0; y < out.h(); ++y)
    for (std::size_t x = 0; x < out.w(); ++x)
      if (mask.at(y, x))
        for (std::size_t c = 0; c < out.c(); ++c) out.at(y, x, c) = edited.at(y, x, c);
  return out;
}

struct EditInputs {
  Image reference;
  Image target;
  std::string reference_prompt;
  std::string target_prompt;
  Mask mask;
};

struct EditResult {
  Image edited;   // composited
  Image decoded;  // decode(final Z_0) before compositing
  Tensor3 target_latent;
  Tensor3 reference_latent;
  LoopResult loop;
  CallCounter counter;
};

inline void check_edit_inputs(const Weights& w, const Image& reference, const Image& target, const Mask& mask) {
  if (!reference.same_shape(target)) {
    throw ShapeError("reference " + reference.shape_string() + " and target " + target.shape_string() +
                     " differ; resize the reference first");
  }
  if (mask.h != target.h() || mask.w != target.w()) throw ShapeError("mask does not match the target image");
  if (mask.latent_h != w.cfg.latent_h || mask.latent_w != w.cfg.latent_w) {
    throw ShapeError("mask latent grid does not match the model");
  }
}

inline EditResult run_visctrl(const Weights& w, const EditInputs& in, const EditConfig& cfg) {
  cfg.validate(w.cfg.blocks, w.cfg.t_train);
  check_edit_inputs(w, in.reference, in.target, in.mask);
  Engine engine(w);
  EditResult res;
  res.target_latent = encode_image(in.target, w);
  res.reference_latent = encode_image(in.reference, w);
  const PromptEmbedding c_t = engine.embed(in.target_prompt);
  Reference ref(res.reference_latent, engine.embed(in.reference_prompt));
  if (!cfg.recompute_reference) ref.prepare(engine, cfg);

  res.loop = run_edit_loop(engine, res.target_latent, c_t, {&ref}, [](std::size_t) { return std::size_t{0}; },
                           cfg, false, cfg.latent_blend ? &in.mask : nullptr);
  res.decoded = decode_latent(res.loop.z0, w);
  res.edited = composite(res.decoded, in.target, in.mask);
  res.counter = engine.counter();
  return res;
}

// Expected evaluation count for a cached-reference run: reference inversion
// and capture (T each) plus inversion and guided denoising (T each) for
// every iteration.
inline std::size_t expected_evaluations(const EditConfig& cfg) {
  std::size_t total = 2 * cfg.steps_for(1);
  if (cfg.steps_for(1) != cfg.steps) total += 2 * cfg.steps;
  for (std::size_t n = 1; n <= cfg.iterations; ++n) total += 2 * cfg.steps_for(n);
  return total;
}

}  // namespace visctrl
