#pragma once

// Feature Gradual Sampling: per-iteration reference sampling over a small
// reference set, the alpha-weighted noise update, and the frame-sequence
// driver built on run_edit_loop.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "visctrl/error.hpp"
#include "visctrl/image.hpp"
#include "visctrl/metrics.hpp"
#include "visctrl/rng.hpp"
#include "visctrl/visctrl.hpp"

namespace visctrl {

struct ReferenceImage {
  Image image;
  std::string prompt;
};

struct ReferenceSet {
  std::vector<ReferenceImage> refs;  // 1..3
  std::uint64_t sampler_seed = 0;

  void validate() const {
    if (refs.empty() || refs.size() > 3) {
      throw InputError("reference set: expected 1-3 references, got " + std::to_string(refs.size()));
    }
  }
};

struct FrameSequence {
  std::vector<Image> frames;
  std::vector<Mask> masks;  // one per frame
  std::string target_prompt;

  void validate() const {
    if (frames.empty()) throw InputError("frame sequence: no frames");
    if (masks.size() != frames.size()) throw InputError("frame sequence: one mask per frame required");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (!frames[i].same_shape(frames[0])) throw ShapeError("frame sequence: frame " + std::to_string(i) + " has different dimensions");
      if (masks[i].h != frames[i].h() || masks[i].w != frames[i].w()) {
        throw ShapeError("frame sequence: mask " + std::to_string(i) + " does not match its frame");
      }
    }
  }
};

// Counter-based draw keyed by (seed, frame, iteration); uniform over
// `count` references.
inline std::size_t sample_reference(std::uint64_t seed, std::size_t count, std::size_t iteration,
                                    std::size_t frame = 0) {
  if (count == 0) throw InputError("sample_reference: empty reference set");
  if (iteration < 1) throw InputError("sample_reference: iterations are 1-based");
  if (count == 1) return 0;
  const std::uint64_t bits = derive_key(seed, frame, iteration);
  // Multiply-shift maps 32 random bits onto [0, count).
  return static_cast<std::size_t>(((bits >> 32) * static_cast<std::uint64_t>(count)) >> 32);
}

inline std::size_t sample_reference(const ReferenceSet& set, std::size_t iteration, std::size_t frame = 0) {
  return sample_reference(set.sampler_seed, set.refs.size(), iteration, frame);
}

// alpha * invert(z_star) + (1 - alpha) * z_T_prev.
inline Tensor3 fgs_update(Engine& engine, const Tensor3& z_T_prev, const Tensor3& z_star, const PromptEmbedding& c_t,
                          double alpha, const StepGrid& grid, InvertCondition cond) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("fgs_update: alpha must lie in [0, 1]");
  if (!z_T_prev.same_shape(z_star)) throw ShapeError("fgs_update: shape mismatch");
  return blend_noise(z_T_prev, engine.invert_latent(z_star, c_t, grid, cond), alpha);
}

struct FrameResult {
  Image edited;
  Image decoded;
  LoopResult loop;
  CallCounter counter;
};

struct ConsistencyRow {
  std::size_t frame_a = 0;
  std::size_t frame_b = 0;
  double edited_mad = 0.0;
  double bg_max_error = 0.0;
};

struct MultiviewResult {
  std::vector<FrameResult> frames;
  std::vector<ConsistencyRow> consistency;
  std::vector<double> frame_bg_mad;
  CallCounter reference_counter;
};

// Captures every reference once, read-only afterwards.
inline std::vector<Reference> prepare_references(Engine& engine, const ReferenceSet& set, const EditConfig& cfg) {
  std::vector<Reference> out;
  out.reserve(set.refs.size());
  for (const auto& r : set.refs) {
    out.emplace_back(encode_image(r.image, engine.weights()), engine.embed(r.prompt));
    if (!cfg.recompute_reference) out.back().prepare(engine, cfg);
  }
  return out;
}

inline FrameResult edit_frame(const Weights& w, const Image& frame, const Mask& mask, const PromptEmbedding& c_t,
                              const std::vector<const Reference*>& refs, const ReferenceSelector& select,
                              const EditConfig& cfg) {
  Engine engine(w);
  FrameResult fr;
  fr.loop = run_edit_loop(engine, encode_image(frame, w), c_t, refs, select, cfg, true,
                          cfg.latent_blend ? &mask : nullptr);
  fr.decoded = decode_latent(fr.loop.z0, w);
  fr.edited = composite(fr.decoded, frame, mask);
  fr.counter = engine.counter();
  return fr;
}

// Per-frame edits (concurrent up to `jobs`) against shared reference
// captures, followed by the pairwise consistency table.
inline MultiviewResult run_multiview(const Weights& w, const FrameSequence& seq, const std::vector<Reference>& refs,
                                     std::uint64_t sampler_seed, const EditConfig& cfg, std::size_t jobs = 1) {
  seq.validate();
  cfg.validate(w.cfg.blocks, w.cfg.t_train);
  if (refs.empty()) throw InputError("run_multiview: no references");
  for (std::size_t i = 0; i < seq.frames.size(); ++i) check_edit_inputs(w, seq.frames[i], seq.frames[i], seq.masks[i]);

  Engine embedder(w);
  const PromptEmbedding c_t = embedder.embed(seq.target_prompt);
  std::vector<const Reference*> ref_ptrs;
  for (const auto& r : refs) ref_ptrs.push_back(&r);

  MultiviewResult out;
  out.frames.resize(seq.frames.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t f = next++; f < seq.frames.size(); f = next++) {
      try {
        const std::size_t key = cfg.frame_keyed_sampler ? f : 0;
        ReferenceSelector select = [&, key](std::size_t n) {
          return sample_reference(sampler_seed, ref_ptrs.size(), n, key);
        };
        out.frames[f] = edit_frame(w, seq.frames[f], seq.masks[f], c_t, ref_ptrs, select, cfg);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, seq.frames.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  // Metrics on the 8-bit outputs actually written.
  std::vector<Image> q, src;
  for (const auto& fr : out.frames) q.push_back(from_image8(to_image8(fr.edited)));
  for (const auto& fr : seq.frames) src.push_back(from_image8(to_image8(fr)));
  for (std::size_t f = 0; f < q.size(); ++f) out.frame_bg_mad.push_back(bg_error(q[f], src[f], seq.masks[f]));
  for (std::size_t f = 0; f + 1 < q.size(); ++f) {
    ConsistencyRow row;
    row.frame_a = f;
    row.frame_b = f + 1;
    row.edited_mad = edited_region_mad(q[f], q[f + 1], seq.masks[f], seq.masks[f + 1]);
    row.bg_max_error = std::max(bg_max_error(q[f], src[f], seq.masks[f]),
                                bg_max_error(q[f + 1], src[f + 1], seq.masks[f + 1]));
    out.consistency.push_back(row);
  }
  return out;
}

inline MultiviewResult run_multiview(const Weights& w, const FrameSequence& seq, const ReferenceSet& set,
                                     const EditConfig& cfg, std::size_t jobs = 1) {
  set.validate();
  for (const auto& r : set.refs) {
    if (!r.image.same_shape(seq.frames.at(0))) {
      throw ShapeError("reference " + r.image.shape_string() + " does not match frame size; resize first");
    }
  }
  Engine engine(w);
  const auto refs = prepare_references(engine, set, cfg);
  auto out = run_multiview(w, seq, refs, set.sampler_seed, cfg, jobs);
  out.reference_counter = engine.counter();
  return out;
}

}  // namespace visctrl
