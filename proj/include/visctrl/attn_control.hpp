#pragma once

// Self-attention key/value capture and injection.
//
// Steps are positions on the inference grid, counted on the descending
// denoising trajectory: the step that moves from grid[i] to grid[i-1] is
// step i (T, T-1, ..., 1). Layers are 1-based block numbers (block b is
// layer b+1). Injection happens iff step > S and layer > L, so S = T or
// L = l_max disables it and S = L = 0 injects everywhere.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "visctrl/denoiser.hpp"
#include "visctrl/error.hpp"
#include "visctrl/image.hpp"
#include "visctrl/numerics.hpp"

namespace visctrl {

struct EditGate {
  std::size_t s_start = 0;
  std::size_t l_start = 0;

  void validate(std::size_t steps, std::size_t l_max) const {
    if (s_start > steps) {
      throw ConfigError("edit gate: S=" + std::to_string(s_start) + " outside [0, " + std::to_string(steps) + "]");
    }
    if (l_start > l_max) {
      throw ConfigError("edit gate: L=" + std::to_string(l_start) + " outside [0, " + std::to_string(l_max) + "]");
    }
  }

  static EditGate vacuous(std::size_t steps, std::size_t l_max) { return {steps, l_max}; }
  static EditGate always() { return {0, 0}; }
};

inline bool gate_active(const EditGate& gate, std::size_t step, std::size_t layer) {
  return step > gate.s_start && layer > gate.l_start;
}

// All (step, layer) pairs the gate opens on a T x l_max grid.
inline std::set<std::pair<std::size_t, std::size_t>> gate_active_set(const EditGate& gate, std::size_t steps,
                                                                     std::size_t l_max) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t t = 1; t <= steps; ++t)
    for (std::size_t l = 1; l <= l_max; ++l)
      if (gate_active(gate, t, l)) out.emplace(t, l);
  return out;
}

// Write-once map (step, layer) -> captured reference K and V.
class KVStore {
 public:
  using Key = std::pair<std::size_t, std::size_t>;

  void insert(std::size_t step, std::size_t layer, KVPair kv) {
    if (kv.k.rows() != kv.v.rows()) throw InjectionError("KVStore: K and V row counts differ");
    auto [it, fresh] = entries_.try_emplace(Key{step, layer}, std::move(kv));
    if (!fresh) {
      throw InjectionError("KVStore: entry (t=" + std::to_string(step) + ", l=" + std::to_string(layer) +
                           ") written twice");
    }
  }

  const KVPair* find(std::size_t step, std::size_t layer) const {
    auto it = entries_.find(Key{step, layer});
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<Key, KVPair>& entries() const noexcept { return entries_; }

  bool bitwise_equal(const KVStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (const auto& [key, kv] : entries_) {
      const auto* other = o.find(key.first, key.second);
      if (!other || !(other->k == kv.k) || !(other->v == kv.v)) return false;
    }
    return true;
  }

 private:
  std::map<Key, KVPair> entries_;
};

enum class HookMode { Off, Capture, Inject };

// Recorded self-attention map, keyed by (iteration, step, layer).
struct AttentionMapKey {
  std::size_t iteration = 0;
  std::size_t step = 0;
  std::size_t layer = 0;

  auto operator<=>(const AttentionMapKey&) const = default;
};

class HookSet : public SelfAttentionHook {
 public:
  HookSet() = default;

  static HookSet capture(KVStore& store) {
    HookSet h;
    h.mode_ = HookMode::Capture;
    h.write_store_ = &store;
    return h;
  }

  static HookSet inject(const KVStore& store, EditGate gate) {
    HookSet h;
    h.mode_ = HookMode::Inject;
    h.read_store_ = &store;
    h.gate_ = gate;
    return h;
  }

  HookMode mode() const noexcept { return mode_; }
  const EditGate& gate() const noexcept { return gate_; }

  void set_step(std::size_t step) noexcept { step_ = step; }
  std::size_t step() const noexcept { return step_; }
  void set_iteration(std::size_t n) noexcept { iteration_ = n; }

  void record_maps(bool on) noexcept { record_maps_ = on; }
  const std::map<AttentionMapKey, Matrix>& maps() const noexcept { return maps_; }

  // Every (step, layer) at which stored K/V actually replaced the branch's own.
  const std::set<std::pair<std::size_t, std::size_t>>& injected() const noexcept { return injected_; }

  void begin_forward(std::size_t blocks) override {
    seen_.assign(blocks, false);
    in_forward_ = true;
  }

  KVPair on_self_attention(std::size_t block, Matrix k, Matrix v) override {
    if (!in_forward_ || block >= seen_.size()) throw InjectionError("HookSet: call outside a forward pass");
    if (seen_[block]) {
      throw InjectionError("HookSet: layer " + std::to_string(block + 1) + " visited twice in one forward");
    }
    seen_[block] = true;
    const std::size_t layer = block + 1;
    switch (mode_) {
      case HookMode::Off:
        return {std::move(k), std::move(v)};
      case HookMode::Capture:
        write_store_->insert(step_, layer, KVPair{k, v});
        return {std::move(k), std::move(v)};
      case HookMode::Inject: {
        if (!gate_active(gate_, step_, layer)) return {std::move(k), std::move(v)};
        const KVPair* stored = read_store_->find(step_, layer);
        if (!stored) {
          throw InjectionError("HookSet: no reference K/V for (t=" + std::to_string(step_) +
                               ", l=" + std::to_string(layer) + "); reference and target step grids differ?");
        }
        if (!stored->k.same_shape(k) || !stored->v.same_shape(v)) {
          throw InjectionError("HookSet: reference K/V shape differs from target at (t=" + std::to_string(step_) +
                               ", l=" + std::to_string(layer) + ")");
        }
        injected_.emplace(step_, layer);
        return *stored;
      }
    }
    return {std::move(k), std::move(v)};
  }

  void on_attention_map(std::size_t block, const Matrix& attn_map) override {
    if (record_maps_) maps_[AttentionMapKey{iteration_, step_, block + 1}] = attn_map;
  }

  void end_forward() override {
    for (std::size_t b = 0; b < seen_.size(); ++b) {
      if (!seen_[b]) throw InjectionError("HookSet: layer " + std::to_string(b + 1) + " skipped in forward");
    }
    in_forward_ = false;
  }

  void merge_maps_from(const HookSet& other) {
    for (const auto& [k, m] : other.maps_) maps_[k] = m;
  }

 private:
  HookMode mode_ = HookMode::Off;
  EditGate gate_{};
  KVStore* write_store_ = nullptr;
  const KVStore* read_store_ = nullptr;
  std::size_t step_ = 0;
  std::size_t iteration_ = 0;
  bool record_maps_ = false;
  bool in_forward_ = false;
  std::vector<bool> seen_;
  std::map<AttentionMapKey, Matrix> maps_;
  std::set<std::pair<std::size_t, std::size_t>> injected_;
};

inline std::string attention_map_filename(const AttentionMapKey& key) {
  return "iter" + std::to_string(key.iteration) + "_t" + std::to_string(key.step) + "_l" +
         std::to_string(key.layer) + ".png";
}

// Grayscale rendering of one map, scaled by the map's own maximum.
inline Image8 render_attention_map(const Matrix& m) {
  float peak = 0.0f;
  for (float v : m.data()) peak = std::max(peak, v);
  Image8 img{m.rows(), m.cols(), 1, std::vector<std::uint8_t>(m.size(), 0)};
  if (peak <= 0.0f) return img;
  for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = quantize(static_cast<float>(m.data()[i] / double(peak)));
  return img;
}

// Writes one PNG per recorded map plus index.txt ("key file" lines) and the
// raw maps as attention_maps.vtsr.
inline void dump_attention_maps(const std::map<AttentionMapKey, Matrix>& maps, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("dump_attention_maps: cannot create '" + dir.string() + "': " + ec.message());
  std::ofstream index(dir / "index.txt", std::ios::trunc);
  if (!index) throw IoError("dump_attention_maps: cannot write index in '" + dir.string() + "'");
  std::vector<NamedTensor> raw;
  for (const auto& [key, m] : maps) {
    const auto file = attention_map_filename(key);
    write_png(dir / file, render_attention_map(m));
    index << "iter=" << key.iteration << " t=" << key.step << " l=" << key.layer << " file=" << file << '\n';
    raw.push_back(named(file.substr(0, file.size() - 4), m));
  }
  if (!index) throw IoError("dump_attention_maps: index write failed");
  write_vtsr(dir / "attention_maps.vtsr", raw);
}

inline void dump_attention_maps(const HookSet& hooks, const std::filesystem::path& dir) {
  dump_attention_maps(hooks.maps(), dir);
}

}  // namespace visctrl
