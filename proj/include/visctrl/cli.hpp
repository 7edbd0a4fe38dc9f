#pragma once

// Command implementations behind the visctrl executable. Argument parsing
// lives in tools/visctrl_cli.cpp; everything here takes a parsed config so
// the commands can be driven in-process.
//
// Every command stages its files in a hidden sibling of the output
// directory and moves them into place only after all compute succeeded.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "visctrl/attn_control.hpp"
#include "visctrl/config.hpp"
#include "visctrl/denoiser.hpp"
#include "visctrl/error.hpp"
#include "visctrl/fgs.hpp"
#include "visctrl/image.hpp"
#include "visctrl/metrics.hpp"
#include "visctrl/rng.hpp"
#include "visctrl/tensor_io.hpp"
#include "visctrl/visctrl.hpp"

namespace visctrl::cli {

namespace fs = std::filesystem;

struct Options {
  fs::path config;
  fs::path out;
  std::size_t jobs = 1;
  bool dump_latents = false;
  bool dump_attn = false;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t hash_bytes(const std::vector<std::uint8_t>& bytes) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline std::uint64_t hash_file(const fs::path& p) { return hash_bytes(read_file_bytes(p)); }

inline double frobenius_distance(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) throw ShapeError("frobenius_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Ordered key=value report.
class Report {
 public:
  void add(const std::string& key, const std::string& value) { lines_.emplace_back(key, value); }
  void add(const std::string& key, const char* value) { add(key, std::string(value)); }
  void add(const std::string& key, double value) { add(key, format_real(value)); }
  void add(const std::string& key, std::size_t value) { add(key, std::to_string(value)); }
  void add(const std::string& key, bool value) { add(key, value ? "true" : "false"); }

  std::string text() const {
    std::string out;
    for (const auto& [k, v] : lines_) out += k + "=" + v + "\n";
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& lines() const noexcept { return lines_; }

 private:
  std::vector<std::pair<std::string, std::string>> lines_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

class StagedOutput {
 public:
  explicit StagedOutput(fs::path out) : final_(std::move(out)) {
    if (final_.empty()) throw ConfigError("no output directory given");
    if (fs::exists(final_) && !fs::is_directory(final_)) {
      throw IoError("output path '" + final_.string() + "' exists and is not a directory");
    }
    const fs::path abs = fs::absolute(final_).lexically_normal();
    const fs::path name = abs.has_filename() ? abs.filename() : abs.parent_path().filename();
    staging_ = (abs.has_filename() ? abs.parent_path() : abs.parent_path().parent_path()) /
               ("." + name.string() + ".partial");
    std::error_code ec;
    fs::remove_all(staging_, ec);
    fs::create_directories(staging_, ec);
    if (ec) throw IoError("cannot create staging directory '" + staging_.string() + "': " + ec.message());
  }

  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;

  ~StagedOutput() {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }

  fs::path file(const fs::path& rel) const {
    const fs::path p = staging_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + p.parent_path().string() + "': " + ec.message());
    return p;
  }

  fs::path dir(const fs::path& rel) const {
    const fs::path p = staging_ / rel;
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create '" + p.string() + "': " + ec.message());
    return p;
  }

  const fs::path& staging() const noexcept { return staging_; }

  void commit() {
    std::error_code ec;
    fs::create_directories(final_, ec);
    if (ec) throw IoError("cannot create output directory '" + final_.string() + "': " + ec.message());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(staging_)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    for (const auto& src : files) {
      const fs::path dst = final_ / fs::relative(src, staging_);
      fs::create_directories(dst.parent_path(), ec);
      if (!ec) fs::rename(src, dst, ec);
      if (ec) throw IoError("cannot move '" + src.string() + "' to '" + dst.string() + "': " + ec.message());
    }
  }

 private:
  fs::path final_;
  fs::path staging_;
};

// ---------------------------------------------------------------------------
// Config readers

inline DenoiserConfig read_denoiser_config(const ConfigFile& f) {
  DenoiserConfig d;
  d.seed = f.u64("seed");
  d.latent_h = f.count("latent_h", d.latent_h);
  d.latent_w = f.count("latent_w", d.latent_w);
  d.latent_channels = f.count("latent_channels", d.latent_channels);
  d.model_dim = f.count("model_dim", d.model_dim);
  d.blocks = f.count("blocks", d.blocks);
  d.prompt_dim = f.count("prompt_dim", d.prompt_dim);
  d.timestep_dim = f.count("timestep_dim", d.timestep_dim);
  d.patch = f.count("patch", d.patch);
  d.t_train = f.count("t_train", d.t_train);
  d.beta_start = f.real("beta_start", d.beta_start);
  d.beta_end = f.real("beta_end", d.beta_end);
  d.validate();
  return d;
}

inline void echo_denoiser_config(Report& r, const DenoiserConfig& d) {
  r.add("config.seed", std::to_string(d.seed));
  r.add("config.latent_h", d.latent_h);
  r.add("config.latent_w", d.latent_w);
  r.add("config.latent_channels", d.latent_channels);
  r.add("config.model_dim", d.model_dim);
  r.add("config.blocks", d.blocks);
  r.add("config.prompt_dim", d.prompt_dim);
  r.add("config.timestep_dim", d.timestep_dim);
  r.add("config.patch", d.patch);
  r.add("config.t_train", d.t_train);
  r.add("config.beta_start", d.beta_start);
  r.add("config.beta_end", d.beta_end);
}

inline InvertCondition read_invert_condition(const ConfigFile& f) {
  const std::string v = f.str("invert_condition", "unconditional");
  if (v == "unconditional") return InvertCondition::Unconditional;
  if (v == "conditional") return InvertCondition::Conditional;
  throw ConfigError(f.origin() + ": invert_condition must be 'unconditional' or 'conditional', got '" + v + "'");
}

inline const char* to_string(InvertCondition c) {
  return c == InvertCondition::Conditional ? "conditional" : "unconditional";
}

// Sampling and guidance keys shared by edit, edit-seq and sweep. The gate
// and step count are skipped when `with_gate` is false (sweep sets them per
// cell).
inline EditConfig read_edit_config(const ConfigFile& f, bool with_gate = true) {
  EditConfig c;
  if (with_gate) {
    c.steps = f.count("steps", c.steps);
    c.gate.s_start = f.count("gate_s", c.gate.s_start);
    c.gate.l_start = f.count("gate_l", c.gate.l_start);
  }
  c.first_steps = f.count("first_steps", c.first_steps);
  c.iterations = f.count("iterations", c.iterations);
  c.omega = f.real("omega", c.omega);
  c.invert_condition = read_invert_condition(f);
  c.inject = f.flag("inject", c.inject);
  c.latent_blend = f.flag("latent_blend", c.latent_blend);
  c.recompute_reference = f.flag("recompute_reference", c.recompute_reference);
  return c;
}

inline void echo_edit_config(Report& r, const EditConfig& c, bool with_gate = true) {
  if (with_gate) {
    r.add("config.steps", c.steps);
    r.add("config.gate_s", c.gate.s_start);
    r.add("config.gate_l", c.gate.l_start);
  }
  r.add("config.first_steps", c.steps_for(1));
  r.add("config.iterations", c.iterations);
  r.add("config.omega", c.omega);
  r.add("config.invert_condition", to_string(c.invert_condition));
  r.add("config.inject", c.inject);
  r.add("config.latent_blend", c.latent_blend);
  r.add("config.recompute_reference", c.recompute_reference);
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw IoError(what + " '" + p.string() + "' not found");
}

// Loads an RGB image and bilinearly resizes it to (h, w) when needed.
inline Image load_rgb_sized(const fs::path& p, std::size_t h, std::size_t w, bool* resized = nullptr) {
  Image img = read_png_rgb(p);
  const bool differs = img.h() != h || img.w() != w;
  if (resized) *resized = differs;
  return differs ? resize_bilinear(img, h, w) : img;
}

inline void check_model_size(const Image& img, const Weights& w, const std::string& what) {
  if (img.h() != w.cfg.image_h() || img.w() != w.cfg.image_w()) {
    throw ShapeError(what + " is " + std::to_string(img.h()) + "x" + std::to_string(img.w()) + ", model expects " +
                     std::to_string(w.cfg.image_h()) + "x" + std::to_string(w.cfg.image_w()));
  }
}

// Per-iteration series written to iterations.csv.
inline std::string iteration_csv(const LoopResult& loop, const Weights& w, const Image& target, const Mask& mask) {
  std::ostringstream csv;
  csv << "n,reference,latent_mse_prev,ssim,bg_mad,z_T_norm,z_T_step_norm,injected_pairs\n";
  const Image8 source8 = to_image8(target);
  const Image source_q = from_image8(source8);
  for (std::size_t i = 0; i < loop.iterations.size(); ++i) {
    const auto& it = loop.iterations[i];
    const Image edited = from_image8(to_image8(composite(decode_latent(it.z0, w), target, mask)));
    const Tensor3 zero(it.z_T.h(), it.z_T.w(), it.z_T.c());
    csv << it.n << ',' << it.reference_index + 1 << ',' << format_real(it.latent_mse_prev) << ','
        << format_real(ssim(edited, source_q)) << ',' << format_real(bg_error(edited, source_q, mask)) << ','
        << format_real(frobenius_distance(it.z_T, zero)) << ','
        << (i == 0 ? std::string() : format_real(frobenius_distance(it.z_T, loop.iterations[i - 1].z_T))) << ','
        << it.injected_pairs << '\n';
  }
  return csv.str();
}

inline std::vector<NamedTensor> latent_dump(const LoopResult& loop) {
  std::vector<NamedTensor> out;
  for (const auto& it : loop.iterations) {
    const std::string p = "iter" + std::to_string(it.n) + ".";
    out.push_back(named(p + "z_star", it.z_star_in));
    out.push_back(named(p + "F", it.inverted));
    out.push_back(named(p + "z_T", it.z_T));
    out.push_back(named(p + "z0", it.z0));
  }
  return out;
}

inline void finish(StagedOutput& staged, const Report& report, std::ostream& out) {
  write_text(staged.file("report.txt"), report.text());
  staged.commit();
  out << report.text();
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen_weights(const ConfigFile& f, const Options& opt, std::ostream& out) {
  const DenoiserConfig d = read_denoiser_config(f);
  const bool zero = f.flag("zero_denoiser", false);
  f.reject_unused();
  StagedOutput staged(opt.out);

  Weights w = init_weights(d);
  if (zero) zero_denoiser(w);
  const auto bytes = vtsr::encode(weights_to_tensors(w));
  write_file_bytes(staged.file("weights.vtsr"), bytes);

  Report r;
  r.add("config.command", "gen-weights");
  echo_denoiser_config(r, d);
  r.add("config.zero_denoiser", zero);
  r.add("weights_file", "weights.vtsr");
  r.add("weights_hash", hex64(hash_bytes(bytes)));
  finish(staged, r, out);
  return 0;
}

inline int cmd_edit(const ConfigFile& f, const Options& opt, std::ostream& out) {
  const fs::path weights_path = f.path("weights");
  const fs::path ref_path = f.path("reference");
  const fs::path tgt_path = f.path("target");
  const fs::path mask_path = f.path("mask");
  EditInputs in;
  in.reference_prompt = f.str("reference_prompt");
  in.target_prompt = f.str("target_prompt");
  EditConfig cfg = read_edit_config(f);
  cfg.record_attention = opt.dump_attn;
  f.reject_unused();
  for (const auto& [p, what] : {std::pair{weights_path, "weights"}, {ref_path, "reference image"},
                                {tgt_path, "target image"}, {mask_path, "mask"}}) {
    require_file(p, what);
  }

  const Weights w = load_weights(weights_path);
  cfg.validate(w.cfg.blocks, w.cfg.t_train);
  in.target = read_png_rgb(tgt_path);
  check_model_size(in.target, w, "target image");
  bool resized = false;
  in.reference = load_rgb_sized(ref_path, in.target.h(), in.target.w(), &resized);
  in.mask = read_mask_png(mask_path, w.cfg.patch);
  check_edit_inputs(w, in.reference, in.target, in.mask);
  StagedOutput staged(opt.out);

  const EditResult res = run_visctrl(w, in, cfg);
  const Image8 edited8 = to_image8(res.edited);
  const auto png = encode_png(edited8);
  write_file_bytes(staged.file("edited.png"), png);
  write_text(staged.file("iterations.csv"), iteration_csv(res.loop, w, in.target, in.mask));
  if (opt.dump_latents) {
    auto tensors = latent_dump(res.loop);
    tensors.insert(tensors.begin(), named("reference.z0", res.reference_latent));
    tensors.insert(tensors.begin(), named("target.z0", res.target_latent));
    write_vtsr(staged.file("latents.vtsr"), tensors);
  }
  if (opt.dump_attn) dump_attention_maps(res.loop.attention_maps, staged.dir("attn"));

  const Image edited_q = from_image8(edited8);
  const Image source_q = from_image8(to_image8(in.target));
  const std::size_t T = cfg.steps, N = cfg.iterations;
  Report r;
  r.add("config.command", "edit");
  r.add("config.weights", weights_path.string());
  r.add("config.reference", ref_path.string());
  r.add("config.target", tgt_path.string());
  r.add("config.mask", mask_path.string());
  r.add("config.reference_prompt", in.reference_prompt);
  r.add("config.target_prompt", in.target_prompt);
  echo_edit_config(r, cfg);
  r.add("weights_hash", hex64(hash_file(weights_path)));
  r.add("reference_resized", resized);
  for (const auto& it : res.loop.iterations) {
    r.add("iter" + std::to_string(it.n) + ".latent_mse_prev", it.latent_mse_prev);
  }
  r.add("evaluations", res.counter.evaluations);
  r.add("inversion_evals", res.counter.inversion_evals);
  r.add("guided_evals", res.counter.guided_evals);
  r.add("capture_evals", res.counter.capture_evals);
  r.add("forward_calls", res.counter.forward_calls);
  r.add("expected_evaluations", expected_evaluations(cfg));
  r.add("budget_2T(N+1)", 2 * T * (N + 1));
  r.add("ssim", ssim(edited_q, source_q));
  r.add("bg_mad", bg_error(edited_q, source_q, in.mask));
  r.add("subject_latent_distance", masked_latent_distance(res.loop.z0, res.reference_latent, in.mask));
  r.add("edited_file", "edited.png");
  r.add("edited_hash", hex64(hash_bytes(png)));
  finish(staged, r, out);
  return 0;
}

struct FrameFile {
  std::size_t index;
  std::string name;
};

// frame_NNNN.png files of a directory, sorted by name.
inline std::vector<FrameFile> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("frames directory '" + dir.string() + "' not found");
  static const std::regex pattern(R"(frame_(\d{4,})\.png)");
  std::vector<FrameFile> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) out.push_back({std::stoul(m[1].str()), name});
  }
  std::sort(out.begin(), out.end(), [](const FrameFile& a, const FrameFile& b) { return a.name < b.name; });
  if (out.empty()) throw InputError("no frame_NNNN.png files in '" + dir.string() + "'");
  return out;
}

inline std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu", index);
  return buf;
}

inline int cmd_edit_seq(const ConfigFile& f, const Options& opt, std::ostream& out) {
  const fs::path weights_path = f.path("weights");
  const fs::path frames_dir = f.path("frames_dir");
  const fs::path masks_dir = f.path("masks_dir");
  const std::string target_prompt = f.str("target_prompt");
  std::vector<std::pair<fs::path, std::string>> ref_specs;
  for (int i = 1; i <= 3; ++i) {
    const std::string key = "reference." + std::to_string(i);
    auto p = f.path_opt(key);
    if (!p) break;
    ref_specs.emplace_back(*p, f.str("reference_prompt." + std::to_string(i)));
  }
  if (ref_specs.empty()) throw ConfigError(f.origin() + ": missing required key 'reference.1'");
  EditConfig cfg = read_edit_config(f);
  cfg.alpha = f.real("alpha", cfg.alpha);
  cfg.sampler_seed = f.u64("sampler_seed", cfg.sampler_seed);
  cfg.frame_keyed_sampler = f.flag("frame_keyed_sampler", cfg.frame_keyed_sampler);
  cfg.record_attention = opt.dump_attn;
  f.reject_unused();

  require_file(weights_path, "weights");
  for (const auto& [p, prompt] : ref_specs) require_file(p, "reference image");
  const auto frame_files = list_frames(frames_dir);
  for (const auto& ff : frame_files) require_file(masks_dir / ff.name, "mask");

  const Weights w = load_weights(weights_path);
  cfg.validate(w.cfg.blocks, w.cfg.t_train);
  FrameSequence seq;
  seq.target_prompt = target_prompt;
  for (const auto& ff : frame_files) {
    seq.frames.push_back(read_png_rgb(frames_dir / ff.name));
    check_model_size(seq.frames.back(), w, "frame " + ff.name);
    seq.masks.push_back(read_mask_png(masks_dir / ff.name, w.cfg.patch));
  }
  ReferenceSet set;
  set.sampler_seed = cfg.sampler_seed;
  for (const auto& [p, prompt] : ref_specs) {
    set.refs.push_back({load_rgb_sized(p, seq.frames[0].h(), seq.frames[0].w()), prompt});
  }
  seq.validate();
  StagedOutput staged(opt.out);

  const MultiviewResult res = run_multiview(w, seq, set, cfg, opt.jobs);

  Report r;
  r.add("config.command", "edit-seq");
  r.add("config.weights", weights_path.string());
  r.add("config.frames_dir", frames_dir.string());
  r.add("config.masks_dir", masks_dir.string());
  r.add("config.target_prompt", target_prompt);
  for (std::size_t i = 0; i < ref_specs.size(); ++i) {
    r.add("config.reference." + std::to_string(i + 1), ref_specs[i].first.string());
    r.add("config.reference_prompt." + std::to_string(i + 1), ref_specs[i].second);
  }
  echo_edit_config(r, cfg);
  r.add("config.alpha", cfg.alpha);
  r.add("config.sampler_seed", std::to_string(cfg.sampler_seed));
  r.add("config.frame_keyed_sampler", cfg.frame_keyed_sampler);
  r.add("weights_hash", hex64(hash_file(weights_path)));
  r.add("frames", frame_files.size());

  CallCounter total = res.reference_counter;
  for (std::size_t i = 0; i < frame_files.size(); ++i) {
    const auto& fr = res.frames[i];
    const std::string stem = frame_name(frame_files[i].index);
    const auto png = encode_png(to_image8(fr.edited));
    write_file_bytes(staged.file(fs::path("frames") / (stem + ".png")), png);
    write_text(staged.file(fs::path("iterations") / (stem + ".csv")),
               iteration_csv(fr.loop, w, seq.frames[i], seq.masks[i]));
    if (opt.dump_latents) write_vtsr(staged.file(fs::path("latents") / (stem + ".vtsr")), latent_dump(fr.loop));
    if (opt.dump_attn) dump_attention_maps(fr.loop.attention_maps, staged.dir(fs::path("attn") / stem));
    std::string refs;
    for (const auto& it : fr.loop.iterations) refs += (refs.empty() ? "" : ",") + std::to_string(it.reference_index + 1);
    r.add(stem + ".references", refs);
    r.add(stem + ".bg_mad", res.frame_bg_mad[i]);
    r.add(stem + ".hash", hex64(hash_bytes(png)));
    total += fr.counter;
  }
  std::ostringstream csv;
  csv << "frame_a,frame_b,edited_mad,bg_max_error\n";
  for (const auto& row : res.consistency) {
    csv << frame_name(frame_files[row.frame_a].index) << ',' << frame_name(frame_files[row.frame_b].index) << ','
        << format_real(row.edited_mad) << ',' << format_real(row.bg_max_error) << '\n';
  }
  write_text(staged.file("consistency.csv"), csv.str());
  r.add("evaluations", total.evaluations);
  r.add("forward_calls", total.forward_calls);
  finish(staged, r, out);
  return 0;
}

// Sweep tokens: an integer, "T" for the cell's step count, "max" for l_max.
inline std::size_t sweep_value(const ConfigFile& f, const std::string& key, const std::string& token,
                               std::size_t symbolic, const char* symbol) {
  if (token == symbol) return symbolic;
  return static_cast<std::size_t>(f.parse_u64(key, token));
}

inline int cmd_sweep(const ConfigFile& f, const Options& opt, std::ostream& out) {
  const fs::path weights_path = f.path("weights");
  const fs::path tgt_path = f.path("target");
  const std::string mode = f.str("mode", "edit");
  if (mode != "edit" && mode != "reconstruct") {
    throw ConfigError(f.origin() + ": mode must be 'edit' or 'reconstruct', got '" + mode + "'");
  }
  const bool edit = mode == "edit";
  std::vector<std::size_t> ts;
  for (const auto& tok : f.list("sweep_t")) ts.push_back(static_cast<std::size_t>(f.parse_u64("sweep_t", tok)));

  std::vector<std::string> s_tokens, l_tokens;
  fs::path ref_path, mask_path;
  EditInputs in;
  EditConfig base;
  InvertCondition cond = InvertCondition::Unconditional;
  if (edit) {
    s_tokens = f.list("sweep_s");
    l_tokens = f.list("sweep_l");
    ref_path = f.path("reference");
    mask_path = f.path("mask");
    in.reference_prompt = f.str("reference_prompt");
    in.target_prompt = f.str("target_prompt");
    base = read_edit_config(f, false);
    if (base.first_steps != 0) throw ConfigError(f.origin() + ": first_steps is not supported by sweep");
  } else {
    cond = read_invert_condition(f);
    if (cond == InvertCondition::Conditional) in.target_prompt = f.str("target_prompt");
  }
  f.reject_unused();
  require_file(weights_path, "weights");
  require_file(tgt_path, "target image");
  if (edit) {
    require_file(ref_path, "reference image");
    require_file(mask_path, "mask");
  }

  const Weights w = load_weights(weights_path);
  const std::size_t l_max = w.cfg.blocks;
  struct Cell {
    std::size_t t, s, l;
  };
  std::vector<Cell> cells;
  for (std::size_t t : ts) {
    if (t < 1 || t > w.cfg.t_train) throw ConfigError(f.origin() + ": sweep_t value " + std::to_string(t) + " out of range");
    if (!edit) {
      cells.push_back({t, 0, 0});
      continue;
    }
    for (const auto& st : s_tokens)
      for (const auto& lt : l_tokens) {
        Cell c{t, sweep_value(f, "sweep_s", st, t, "T"), sweep_value(f, "sweep_l", lt, l_max, "max")};
        EditGate{c.s, c.l}.validate(t, l_max);
        cells.push_back(c);
      }
  }
  in.target = read_png_rgb(tgt_path);
  check_model_size(in.target, w, "target image");
  if (edit) {
    in.reference = load_rgb_sized(ref_path, in.target.h(), in.target.w());
    in.mask = read_mask_png(mask_path, w.cfg.patch);
    check_edit_inputs(w, in.reference, in.target, in.mask);
  }
  StagedOutput staged(opt.out);

  Report r;
  r.add("config.command", "sweep");
  r.add("config.mode", mode);
  r.add("config.weights", weights_path.string());
  r.add("config.target", tgt_path.string());
  std::string t_list;
  for (auto t : ts) t_list += (t_list.empty() ? "" : ",") + std::to_string(t);
  r.add("config.sweep_t", t_list);
  if (edit) {
    r.add("config.reference", ref_path.string());
    r.add("config.mask", mask_path.string());
    r.add("config.reference_prompt", in.reference_prompt);
    r.add("config.target_prompt", in.target_prompt);
    std::string s_list, l_list;
    for (const auto& s : s_tokens) s_list += (s_list.empty() ? "" : ",") + s;
    for (const auto& l : l_tokens) l_list += (l_list.empty() ? "" : ",") + l;
    r.add("config.sweep_s", s_list);
    r.add("config.sweep_l", l_list);
    echo_edit_config(r, base, false);
  } else {
    r.add("config.invert_condition", to_string(cond));
  }
  r.add("weights_hash", hex64(hash_file(weights_path)));

  std::ostringstream index;
  const Image source_q = from_image8(to_image8(in.target));
  if (edit) {
    index << "T,S,L,file,gate_pairs,injected_pairs,latent_mse_target,ssim\n";
    for (const auto& c : cells) {
      EditConfig cfg = base;
      cfg.steps = c.t;
      cfg.gate = {c.s, c.l};
      const EditResult res = run_visctrl(w, in, cfg);
      const std::string file = "cells/t" + std::to_string(c.t) + "_s" + std::to_string(c.s) + "_l" +
                               std::to_string(c.l) + ".png";
      const Image8 e8 = to_image8(res.edited);
      write_png(staged.file(file), e8);
      index << c.t << ',' << c.s << ',' << c.l << ',' << file << ','
            << gate_active_set(cfg.gate, c.t, l_max).size() << ','
            << (res.loop.iterations.empty() ? 0 : res.loop.iterations.back().injected_pairs) << ','
            << format_real(latent_mse(res.loop.z0, res.target_latent)) << ','
            << format_real(ssim(from_image8(e8), source_q)) << '\n';
    }
  } else {
    index << "T,file,latent_mse,ssim\n";
    Engine engine(w);
    const Tensor3 z0 = encode_image(in.target, w);
    const PromptEmbedding c = cond == InvertCondition::Conditional ? engine.embed(in.target_prompt) : engine.null();
    double prev = 0.0;
    bool monotone = true;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::size_t t = cells[i].t;
      const Tensor3 rec = engine.reconstruct_latent(z0, c, engine.grid(t), cond);
      const std::string file = "cells/t" + std::to_string(t) + "_recon.png";
      const Image8 e8 = to_image8(decode_latent(rec, w));
      write_png(staged.file(file), e8);
      const double mse = latent_mse(rec, z0);
      if (i > 0 && mse > prev) monotone = false;
      prev = mse;
      index << t << ',' << file << ',' << format_real(mse) << ',' << format_real(ssim(from_image8(e8), source_q)) << '\n';
    }
    r.add("monotone_nonincreasing", monotone);
  }
  write_text(staged.file("index.csv"), index.str());
  r.add("cells", cells.size());
  r.add("index_file", "index.csv");
  finish(staged, r, out);
  return 0;
}

inline int cmd_reconstruct(const ConfigFile& f, const Options& opt, std::ostream& out) {
  const fs::path weights_path = f.path("weights");
  const fs::path image_path = f.path("image");
  const std::size_t steps = f.count("steps", 5);
  const InvertCondition cond = read_invert_condition(f);
  const auto prompt = f.find("prompt");
  if (cond == InvertCondition::Conditional && !prompt) {
    throw ConfigError(f.origin() + ": conditional reconstruction needs key 'prompt'");
  }
  f.reject_unused();
  require_file(weights_path, "weights");
  require_file(image_path, "image");

  const Weights w = load_weights(weights_path);
  if (steps < 1 || steps > w.cfg.t_train) throw ConfigError(f.origin() + ": steps out of range");
  const Image img = read_png_rgb(image_path);
  check_model_size(img, w, "image");
  StagedOutput staged(opt.out);

  Engine engine(w);
  const Tensor3 z0 = encode_image(img, w);
  const PromptEmbedding c = prompt ? engine.embed(*prompt) : engine.null();
  const Tensor3 rec = engine.reconstruct_latent(z0, c, engine.grid(steps), cond);
  const Image8 rec8 = to_image8(decode_latent(rec, w));
  const auto png = encode_png(rec8);
  write_file_bytes(staged.file("reconstruction.png"), png);
  if (opt.dump_latents) write_vtsr(staged.file("latents.vtsr"), {named("z0", z0), named("reconstruction", rec)});

  Report r;
  r.add("config.command", "reconstruct");
  r.add("config.weights", weights_path.string());
  r.add("config.image", image_path.string());
  r.add("config.steps", steps);
  r.add("config.invert_condition", to_string(cond));
  r.add("config.prompt", prompt.value_or(""));
  r.add("weights_hash", hex64(hash_file(weights_path)));
  r.add("latent_mse", latent_mse(rec, z0));
  r.add("ssim", ssim(from_image8(rec8), img));
  r.add("evaluations", engine.counter().evaluations);
  r.add("reconstruction_file", "reconstruction.png");
  r.add("reconstruction_hash", hex64(hash_bytes(png)));
  finish(staged, r, out);
  return 0;
}

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"gen-weights", "edit", "edit-seq", "sweep", "reconstruct"};
  return names;
}

inline int exit_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Config: return 2;
    case ErrorCode::Input: return 3;
    case ErrorCode::Shape: return 4;
    case ErrorCode::Domain: return 5;
    case ErrorCode::Injection: return 6;
    case ErrorCode::Format: return 7;
    case ErrorCode::Io: return 8;
  }
  return 1;
}

inline std::string single_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

// Runs one command; failures become a single "error code=... message=..."
// line on `err` and a nonzero status.
inline int run(const std::string& command, const Options& opt, std::ostream& out, std::ostream& err) {
  try {
    if (opt.config.empty()) throw ConfigError("--config is required");
    require_file(opt.config, "config");
    const ConfigFile f = ConfigFile::load(opt.config);
    if (opt.jobs < 1) throw ConfigError("--jobs must be >= 1");
    if (command == "gen-weights") return cmd_gen_weights(f, opt, out);
    if (command == "edit") return cmd_edit(f, opt, out);
    if (command == "edit-seq") return cmd_edit_seq(f, opt, out);
    if (command == "sweep") return cmd_sweep(f, opt, out);
    if (command == "reconstruct") return cmd_reconstruct(f, opt, out);
    throw ConfigError("unknown command '" + command + "'");
  } catch (const Error& e) {
    err << "error code=" << to_string(e.code()) << " message=\"" << single_line(e.what()) << "\"\n";
    return exit_status(e.code());
  } catch (const std::exception& e) {
    err << "error code=INTERNAL message=\"" << single_line(e.what()) << "\"\n";
    return 70;
  }
}

}  // namespace visctrl::cli
