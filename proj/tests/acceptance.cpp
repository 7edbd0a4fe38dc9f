// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed here.
// Usage: acceptance <work-dir>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "fixtures.hpp"
#include "visctrl/cli.hpp"
#include "visctrl/fgs.hpp"

using namespace visctrl;
namespace fs = std::filesystem;

namespace {

constexpr double kRoundTripMse = 1e-6;
constexpr double kRoundTripSeconds = 1.0;
constexpr double kAttentionTol = 1e-9;
constexpr double kRowSumTol = 1e-6;
constexpr double kNormLawRel = 1e-6;
constexpr double kSsimTol = 1e-9;
constexpr double kEditSeconds = 10.0;

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Weights seeded(std::uint64_t seed) {
  DenoiserConfig c;
  c.seed = seed;
  return init_weights(c);
}

EditInputs scene() {
  return {fixtures::disc_scene(30, 34, 14, 0.9f, 0.2f, 0.1f), fixtures::disc_scene(32, 32, 12, 0.2f, 0.3f, 0.9f),
          "a red ball", "a ball in the sky", fixtures::disc_mask(32, 32, 12)};
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Check c1_invertibility() {
  Check c;
  Weights w = seeded(1);
  zero_denoiser(w);
  std::mt19937_64 rng(1);
  const Tensor3 z0 = oracle::random_tensor(rng, 8, 8, 4);
  for (std::size_t T : {1u, 5u, 50u}) {
    Engine e(w);
    const auto t0 = std::chrono::steady_clock::now();
    const double mse = latent_mse(e.reconstruct_latent(z0, e.null(), e.grid(T), InvertCondition::Unconditional), z0);
    const double dt = seconds_since(t0);
    c.require(mse < kRoundTripMse, "T=" + std::to_string(T) + " mse " + fmt(mse));
    c.require(dt < kRoundTripSeconds, "T=" + std::to_string(T) + " took " + fmt(dt) + " s");
  }
  return c;
}

Check c2_step_refinement() {
  Check c;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Weights w = seeded(seed);
    Engine e(w);
    std::mt19937_64 rng(seed + 100);
    const Tensor3 z0 = oracle::random_tensor(rng, 8, 8, 4, 0.0, 1.0);
    const auto c_s = e.embed("a photo");
    double m[3];
    const std::size_t ts[3] = {5, 20, 50};
    for (int i = 0; i < 3; ++i)
      m[i] = latent_mse(e.reconstruct_latent(z0, c_s, e.grid(ts[i]), InvertCondition::Unconditional), z0);
    c.require(m[2] < m[1] && m[1] < m[0], "seed " + std::to_string(seed) + ": " + fmt(m[0]) + ", " + fmt(m[1]) +
                                              ", " + fmt(m[2]));
  }
  return c;
}

Check c3_gate_identity() {
  Check c;
  const Weights w = seeded(2);
  const auto in = scene();
  EditConfig plain;
  plain.inject = false;
  EditConfig vac;
  vac.gate = EditGate::vacuous(5, 4);
  c.require(oracle::bitwise_equal(run_visctrl(w, in, plain).loop.z0, run_visctrl(w, in, vac).loop.z0),
            "vacuous gate differs from plain reconstruction");

  auto self_in = in;
  self_in.reference = in.target;
  self_in.reference_prompt = in.target_prompt;
  EditConfig self;
  self.iterations = 1;
  self.gate = EditGate::always();
  const auto res = run_visctrl(w, self_in, self);
  Engine e(w);
  Reference ref(encode_image(in.target, w), e.embed(in.target_prompt));
  ref.prepare(e, self);
  c.require(oracle::bitwise_equal(res.loop.z0, ref.branch(5).reconstruction),
            "self-injection differs from reference reconstruction");

  for (std::size_t s = 0; s <= 5; ++s)
    for (std::size_t l = 0; l <= 4; ++l) {
      const auto big = gate_active_set({s, l}, 5, 4);
      c.require(big.size() == (5 - s) * (4 - l), "active set size");
      if (s < 5) {
        for (const auto& p : gate_active_set({s + 1, l}, 5, 4)) c.require(big.count(p) == 1, "monotone in S");
      }
      if (l < 4) {
        for (const auto& p : gate_active_set({s, l + 1}, 5, 4)) c.require(big.count(p) == 1, "monotone in L");
      }
    }
  return c;
}

Check c4_literal_iteration(const fs::path& work) {
  Check c;
  const Weights w = seeded(2);
  EditConfig cfg;
  cfg.iterations = 5;
  const auto res = run_visctrl(w, scene(), cfg);
  const fs::path dump = work / "c4_latents.vtsr";
  write_vtsr(dump, cli::latent_dump(res.loop));
  const auto tensors = read_vtsr(dump);
  auto find = [&](const std::string& name) {
    for (const auto& t : tensors)
      if (t.name == name) return to_tensor3(t);
    throw InputError("missing dumped tensor " + name);
  };
  for (std::size_t n = 1; n < 5; ++n) {
    c.require(oracle::bitwise_equal(find("iter" + std::to_string(n + 1) + ".z_star"),
                                    find("iter" + std::to_string(n) + ".z0")),
              "iteration " + std::to_string(n + 1) + " input differs from iteration " + std::to_string(n) + " output");
  }
  return c;
}

double norm_diff(const Tensor3& a, const Tensor3& b) { return cli::frobenius_distance(a, b); }

Check c5_fgs_law() {
  Check c;
  const Weights w = seeded(3);
  FrameSequence seq;
  seq.target_prompt = "a blue ball";
  seq.frames = {fixtures::disc_scene(32, 32, 12, 0.9f, 0.3f, 0.1f)};
  seq.masks = {fixtures::disc_mask(32, 32, 12)};
  ReferenceSet set;
  set.sampler_seed = 4;
  set.refs = {{fixtures::disc_scene(30, 30, 13, 0.1f, 0.2f, 0.9f), "a blue ball"},
              {fixtures::disc_scene(34, 30, 13, 0.1f, 0.4f, 0.8f), "a blue ball, side"}};
  for (double alpha : {0.0, 0.3, 0.7, 1.0}) {
    EditConfig cfg;
    cfg.alpha = alpha;
    const auto res = run_multiview(w, seq, set, cfg);
    const auto& its = res.frames[0].loop.iterations;
    for (std::size_t n = 1; n < its.size(); ++n) {
      const double lhs = norm_diff(its[n].z_T, its[n - 1].z_T);
      const double rhs = alpha * norm_diff(its[n].inverted, its[n - 1].z_T);
      c.require(std::abs(lhs - rhs) <= kNormLawRel * std::max(rhs, 1e-300) || (lhs == 0.0 && rhs == 0.0),
                "alpha " + fmt(alpha) + " n " + std::to_string(n + 1) + ": " + fmt(lhs) + " vs " + fmt(rhs));
      if (alpha == 0.0) c.require(oracle::bitwise_equal(its[n].z_T, its[n - 1].z_T), "alpha=0 did not freeze");
      if (alpha == 1.0) c.require(oracle::bitwise_equal(its[n].z_T, its[n].inverted), "alpha=1 did not replace");
    }
  }
  ReferenceSet one = set;
  one.refs.resize(1);
  EditConfig cfg;
  cfg.alpha = 1.0;
  const auto mv = run_multiview(w, seq, one, cfg);
  const auto plain = run_visctrl(w, {one.refs[0].image, seq.frames[0], one.refs[0].prompt, seq.target_prompt, seq.masks[0]}, cfg);
  c.require(encode_png(to_image8(mv.frames[0].edited)) == encode_png(to_image8(plain.edited)),
            "alpha=1 single reference differs from plain run");
  return c;
}

Check c6_attention(const fs::path& work) {
  Check c;
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> dim(1, 24);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = dim(rng), m = dim(rng), d = dim(rng), dv = dim(rng);
    const Matrix q = oracle::random_matrix(rng, n, d, 2.0), k = oracle::random_matrix(rng, m, d, 2.0),
                 v = oracle::random_matrix(rng, m, dv, 3.0);
    const auto got = attention(q, k, v, d);
    const auto want = oracle::attention(q, k, v, d);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < dv; ++j) {
        const double o = got.out(r, j);
        c.require(std::abs(o - want.out(r, j)) <= kAttentionTol, "case " + std::to_string(i) + " mismatch");
        double lo = 1e300, hi = -1e300;
        for (std::size_t s = 0; s < m; ++s) {
          lo = std::min<double>(lo, v(s, j));
          hi = std::max<double>(hi, v(s, j));
        }
        c.require(o >= lo - 1e-6 && o <= hi + 1e-6, "case " + std::to_string(i) + " outside convex hull");
      }
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix kp(m, d), vp(m, dv);
    for (std::size_t s = 0; s < m; ++s) {
      for (std::size_t j = 0; j < d; ++j) kp(s, j) = k(perm[s], j);
      for (std::size_t j = 0; j < dv; ++j) vp(s, j) = v(perm[s], j);
    }
    const auto permuted = attention(q, kp, vp, d);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < dv; ++j)
        c.require(std::abs(permuted.out(r, j) - got.out(r, j)) <= 1e-6, "case " + std::to_string(i) + " not permutation invariant");
  }

  const Weights w = seeded(6);
  EditConfig cfg;
  cfg.iterations = 1;
  cfg.record_attention = true;
  const auto res = run_visctrl(w, scene(), cfg);
  const fs::path dir = work / "c6_attn";
  dump_attention_maps(res.loop.attention_maps, dir);
  const auto maps = read_vtsr(dir / "attention_maps.vtsr");
  c.require(maps.size() == 20, "expected 20 dumped maps, got " + std::to_string(maps.size()));
  for (const auto& t : maps) {
    const Matrix m = to_matrix(t);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double s = 0.0;
      for (float v : m.row(r)) s += v;
      c.require(std::abs(s - 1.0) <= kRowSumTol, t.name + " row sum " + fmt(s));
    }
  }
  return c;
}

Check c7_background() {
  Check c;
  for (std::uint64_t seed : {1u, 7u}) {
    const Weights w = seeded(seed);
    const auto in = scene();
    for (const EditGate gate : {EditGate::always(), EditGate{2, 1}}) {
      EditConfig cfg;
      cfg.gate = gate;
      cfg.iterations = 2;
      const auto res = run_visctrl(w, in, cfg);
      const Image8 out = decode_png(encode_png(to_image8(res.edited)), 3, "edited");
      const Image8 src = to_image8(in.target);
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x)
          if (!in.mask.at(y, x))
            for (std::size_t ch = 0; ch < 3; ++ch)
              c.require(out.pixels[(y * 64 + x) * 3 + ch] == src.pixels[(y * 64 + x) * 3 + ch],
                        "background pixel changed at " + std::to_string(y) + "," + std::to_string(x));
      c.require(bg_error(from_image8(out), from_image8(src), in.mask) == 0.0, "BG-MAD is not zero");
    }
  }
  return c;
}

struct CliRun {
  int status;
  std::string report;
  std::string err;
  double seconds;
};

CliRun cli_run(const std::string& command, const fs::path& cfg, const fs::path& out) {
  cli::Options opt;
  opt.config = cfg;
  opt.out = out;
  opt.dump_latents = true;
  std::ostringstream o, e;
  const auto t0 = std::chrono::steady_clock::now();
  const int status = cli::run(command, opt, o, e);
  return {status, o.str(), e.str(), seconds_since(t0)};
}

std::string report_value(const std::string& report, const std::string& key) {
  std::istringstream in(report);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return "<missing>";
}

void prepare_cli_inputs(const fs::path& work) {
  fixtures::write_text(work / "gen.cfg", "seed = 1\n");
  const auto g = cli_run("gen-weights", work / "gen.cfg", work / "weights");
  if (g.status != 0) throw InputError("gen-weights failed: " + g.err);
  write_png(work / "reference.png", to_image8(fixtures::disc_scene(30, 34, 14, 0.9f, 0.2f, 0.1f)));
  write_png(work / "target.png", to_image8(fixtures::disc_scene(32, 32, 12, 0.2f, 0.3f, 0.9f)));
  write_png(work / "mask.png", mask_to_image8(fixtures::disc_mask(32, 32, 12)));
  const std::string edit =
      "weights = weights/weights.vtsr\nreference = reference.png\ntarget = target.png\nmask = mask.png\n"
      "reference_prompt = a red ball\ntarget_prompt = a ball in the sky\n"
      "steps = 5\niterations = 5\nomega = 6\n";
  fixtures::write_text(work / "edit.cfg", edit);
  fixtures::write_text(work / "edit_recompute.cfg", edit + "recompute_reference = true\n");
}

Check c8_determinism(const fs::path& work) {
  Check c;
  const auto a = cli_run("edit", work / "edit.cfg", work / "edit_a");
  const auto b = cli_run("edit", work / "edit.cfg", work / "edit_b");
  const auto r = cli_run("edit", work / "edit_recompute.cfg", work / "edit_recompute");
  c.require(a.status == 0 && b.status == 0 && r.status == 0, "edit failed: " + a.err + b.err + r.err);
  if (!c.ok) return c;
  for (const char* f : {"edited.png", "iterations.csv", "latents.vtsr", "report.txt"})
    c.require(read_file_bytes(work / "edit_a" / f) == read_file_bytes(work / "edit_b" / f),
              std::string(f) + " differs between identical runs");
  for (const char* f : {"edited.png", "iterations.csv", "latents.vtsr"})
    c.require(read_file_bytes(work / "edit_a" / f) == read_file_bytes(work / "edit_recompute" / f),
              std::string(f) + " differs between cached and recomputed references");
  return c;
}

Check c9_budget(const fs::path& work) {
  Check c;
  const auto run = cli_run("edit", work / "edit.cfg", work / "edit_budget");
  c.require(run.status == 0, "edit failed: " + run.err);
  if (!c.ok) return c;
  c.require(run.seconds < kEditSeconds, "edit took " + fmt(run.seconds) + " s");
  const std::size_t T = 5, N = 5;
  c.require(report_value(run.report, "evaluations") == std::to_string(2 * T * (N + 1)),
            "evaluations=" + report_value(run.report, "evaluations"));
  c.require(report_value(run.report, "forward_calls") == std::to_string(3 * T * (N + 1)),
            "forward_calls=" + report_value(run.report, "forward_calls"));
  c.require(report_value(run.report, "capture_evals") == std::to_string(T), "capture_evals");
  c.detail = c.ok ? "edit " + fmt(run.seconds) + " s, evaluations " + report_value(run.report, "evaluations") : c.detail;
  return c;
}

Check c10_ssim_and_formats(const fs::path& work) {
  Check c;
  std::mt19937_64 rng(10);
  const Image x = oracle::random_tensor(rng, 16, 16, 3, 0.0, 1.0);
  c.require(std::abs(ssim(x, x) - 1.0) <= kSsimTol, "ssim(x,x) = " + fmt(ssim(x, x)));
  Image y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] = std::clamp(0.8f * y.data()[i] + 0.1f * ((i * 7) % 5) / 4.0f, 0.0f, 1.0f);
  c.require(std::abs(ssim(x, y) - oracle::ssim(x, y)) <= kSsimTol, "ssim differs from oracle");

  const std::vector<NamedTensor> ts = {{"a", {2}, {1.0f, -2.0f}}};
  const std::vector<std::uint8_t> golden = {'V', 'T', 'S', 'R', 1, 0, 1, 0, 1, 0, 'a', 1, 1,
                                            2,   0,   0,   0,   0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0};
  c.require(vtsr::encode(ts) == golden, "VTSR golden bytes");
  c.require(vtsr::encode(vtsr::decode(golden)) == golden, "VTSR round trip");

  const Image8 img = to_image8(x);
  write_png(work / "c10.png", img);
  c.require(read_png8(work / "c10.png", 3) == img, "PNG round trip");

  const std::string cfg_text = "steps = 5\nomega = 6.5\ntarget_prompt = a cat, sitting\n";
  c.require(ConfigFile::parse(cfg_text).serialize() == cfg_text, "config round trip");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "visctrl_acceptance";
  std::error_code ec;
  fs::remove_all(work, ec);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
      {"1 zero-denoiser DDIM round trip", c1_invertibility},
      {"2 step refinement T=50 < T=20 < T=5", c2_step_refinement},
      {"3 gate identities and monotonicity", c3_gate_identity},
      {"4 iteration chaining is literal", [&] { return c4_literal_iteration(work); }},
      {"5 FGS noise blend law", c5_fgs_law},
      {"6 attention oracle and map row sums", [&] { return c6_attention(work); }},
      {"7 background preserved bitwise", c7_background},
      {"8 determinism and cache soundness", [&] {
         prepare_cli_inputs(work);
         return c8_determinism(work);
       }},
      {"9 desk-scale edit budget", [&] { return c9_budget(work); }},
      {"10 SSIM oracle and format round trips", [&] { return c10_ssim_and_formats(work); }},
  };

  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Check c;
    try {
      c = fn();
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail = std::string("exception: ") + e.what();
    }
    failures += !c.ok;
    std::cout << (c.ok ? "PASS" : "FAIL") << " criterion " << name << (c.detail.empty() ? "" : " (" + c.detail + ")")
              << '\n';
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
  return failures == 0 ? 0 : 1;
}
