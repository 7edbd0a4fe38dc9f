#pragma once

// Toy conditional noise predictor, linear patch codec and hash prompt
// embedder.
//
// The predictor is a stack of `blocks` identical-shape blocks operating on a
// (h*w) x d token matrix:
//
//   X  = (Z / sqrt(abar_t)) W_in + time_proj(sinusoid(t))   (broadcast)
//   per block:
//     X += tanh(X W_ff_in) W_ff_out                (residual feed-forward)
//     X += attn(X W_q, X W_k, X W_v) W_o           (self-attention, hookable K/V)
//     X += attn(X W_cq, C W_ck, C W_cv) W_co       (cross-attention on prompt C)
//   eps = sqrt(abar_t) * X W_out
//
// The sqrt(abar_t) scalings keep eps small at high noise levels, where the
// DDIM step divides by sqrt(abar_t); W_out is drawn with kHeadGain.
//
// Layer l in the edit gate is block index l-1.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "visctrl/error.hpp"
#include "visctrl/numerics.hpp"
#include "visctrl/rng.hpp"
#include "visctrl/scheduler.hpp"
#include "visctrl/tensor_io.hpp"

namespace visctrl {

struct DenoiserConfig {
  std::size_t latent_h = 8;
  std::size_t latent_w = 8;
  std::size_t latent_channels = 4;
  std::size_t model_dim = 32;  // d: attention width
  std::size_t blocks = 4;      // l_max
  std::size_t prompt_dim = 16;
  std::size_t timestep_dim = 16;
  std::size_t patch = 8;
  std::size_t t_train = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::uint64_t seed = 0;

  std::size_t ff_dim() const noexcept { return 2 * model_dim; }
  std::size_t patch_len() const noexcept { return patch * patch * 3; }
  std::size_t image_h() const noexcept { return latent_h * patch; }
  std::size_t image_w() const noexcept { return latent_w * patch; }

  void validate() const {
    const std::pair<const char*, std::size_t> counts[] = {
        {"latent_h", latent_h},         {"latent_w", latent_w},   {"latent_channels", latent_channels},
        {"model_dim", model_dim},       {"prompt_dim", prompt_dim}, {"timestep_dim", timestep_dim},
        {"patch", patch}};
    for (const auto& [name, v] : counts) {
      if (v < 1) throw ConfigError(std::string("denoiser config: ") + name + " must be >= 1");
    }
    if (blocks < 2) throw ConfigError("denoiser config: blocks must be >= 2");
    if (t_train < 1) throw ConfigError("denoiser config: t_train must be >= 1");
    make_schedule(t_train, beta_start, beta_end);
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct BlockWeights {
  Matrix ff_in, ff_out;
  Matrix self_q, self_k, self_v, self_out;
  Matrix cross_q, cross_k, cross_v, cross_out;

  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

struct Weights {
  DenoiserConfig cfg;
  NoiseSchedule schedule;  // derived from cfg, not stored
  Matrix latent_in;   // c x d
  Matrix time_proj;   // timestep_dim x d
  std::vector<BlockWeights> blocks;
  Matrix latent_out;  // d x c
  Matrix encoder;     // (p*p*3) x c
  Matrix decoder;     // c x (p*p*3)

  friend bool operator==(const Weights&, const Weights&) = default;
};

struct PromptEmbedding {
  std::vector<std::string> tokens;
  Matrix vectors;  // tokens x prompt_dim

  std::size_t size() const noexcept { return vectors.rows(); }
};

// ---------------------------------------------------------------------------
// Hooks

struct KVPair {
  Matrix k;
  Matrix v;
};

// Observer/injector for the self-attention sublayers of one forward pass.
class SelfAttentionHook {
 public:
  virtual ~SelfAttentionHook() = default;
  virtual void begin_forward(std::size_t /*blocks*/) {}
  // `block` is 0-based. Must return matrices of the same shapes as k and v.
  virtual KVPair on_self_attention(std::size_t block, Matrix k, Matrix v) = 0;
  virtual void on_attention_map(std::size_t /*block*/, const Matrix& /*attn_map*/) {}
  virtual void end_forward() {}
};

// Optional instrumentation of every sublayer input in a forward pass.
struct BlockTrace {
  Matrix block_input;
  Matrix self_input;
  Matrix self_q, self_k_used, self_v_used, self_out;
  Matrix cross_input;
  Matrix cross_q, cross_k, cross_v, cross_out;
};

struct ForwardTrace {
  Matrix tokens_in;  // after the timestep embedding
  std::vector<BlockTrace> blocks;
};

// ---------------------------------------------------------------------------
// Initialisation

inline constexpr double kHeadGain = 0.003;

namespace detail {

inline Matrix random_matrix(std::uint64_t seed, std::string_view name, std::size_t rows, std::size_t cols,
                            double gain = 1.0) {
  SplitMix64 rng(derive_key(seed, fnv1a64(name)));
  // Uniform with variance gain^2/fan_in.
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(rows));
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = static_cast<float>(rng.symmetric(bound));
  return m;
}

// Solves (A^T A) X = A^T column by column; A has full column rank.
inline Matrix pseudo_inverse(const Matrix& a) {
  const std::size_t n = a.cols();
  const std::size_t m = a.rows();
  std::vector<double> gram(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += static_cast<double>(a(r, i)) * a(r, j);
      gram[i * n + j] = s;
    }
  // Cholesky: gram = L L^T.
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = gram[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (!(s > 0.0)) throw DomainError("pseudo_inverse: matrix is rank deficient");
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  Matrix out(n, m);
  std::vector<double> y(n), x(n);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = a(r, i);
      for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
      y[i] = s / l[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * x[k];
      x[ii] = s / l[ii * n + ii];
    }
    for (std::size_t i = 0; i < n; ++i) out(i, r) = static_cast<float>(x[i]);
  }
  return out;
}

// Encoder columns: per-colour-channel patch means first, then seeded random
// directions, orthonormalised and scaled by 1/patch so a flat patch of value
// v encodes to v in the matching channel.
inline Matrix make_encoder(const DenoiserConfig& cfg) {
  const std::size_t len = cfg.patch_len();
  const std::size_t c = cfg.latent_channels;
  if (c > len) throw ConfigError("denoiser config: latent_channels exceeds patch*patch*3");
  SplitMix64 rng(derive_key(cfg.seed, fnv1a64("encoder")));
  std::vector<std::vector<double>> cols;
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> v(len);
    if (j < 3) {
      for (std::size_t i = 0; i < len; ++i) v[i] = (i % 3 == j) ? 1.0 : 0.0;
    } else {
      for (auto& x : v) x = rng.symmetric(1.0);
    }
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : cols) {
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += v[i] * u[i];
        for (std::size_t i = 0; i < len; ++i) v[i] -= dot * u[i];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    cols.push_back(std::move(v));
  }
  Matrix e(len, c);
  const double scale = 1.0 / static_cast<double>(cfg.patch);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t i = 0; i < len; ++i) e(i, j) = static_cast<float>(cols[j][i] * scale);
  return e;
}

}  // namespace detail

inline Weights init_weights(const DenoiserConfig& cfg) {
  cfg.validate();
  const auto d = cfg.model_dim;
  const auto s = cfg.seed;
  Weights w;
  w.cfg = cfg;
  w.schedule = make_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end);
  w.latent_in = detail::random_matrix(s, "latent_in", cfg.latent_channels, d);
  w.time_proj = detail::random_matrix(s, "time_proj", cfg.timestep_dim, d);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    BlockWeights bw;
    bw.ff_in = detail::random_matrix(s, p + "ff_in", d, cfg.ff_dim());
    bw.ff_out = detail::random_matrix(s, p + "ff_out", cfg.ff_dim(), d);
    bw.self_q = detail::random_matrix(s, p + "self_q", d, d);
    bw.self_k = detail::random_matrix(s, p + "self_k", d, d);
    bw.self_v = detail::random_matrix(s, p + "self_v", d, d);
    bw.self_out = detail::random_matrix(s, p + "self_out", d, d);
    bw.cross_q = detail::random_matrix(s, p + "cross_q", d, d);
    bw.cross_k = detail::random_matrix(s, p + "cross_k", cfg.prompt_dim, d);
    bw.cross_v = detail::random_matrix(s, p + "cross_v", cfg.prompt_dim, d);
    bw.cross_out = detail::random_matrix(s, p + "cross_out", d, d);
    w.blocks.push_back(std::move(bw));
  }
  w.latent_out = detail::random_matrix(s, "latent_out", d, cfg.latent_channels, kHeadGain);
  w.encoder = detail::make_encoder(cfg);
  w.decoder = detail::pseudo_inverse(w.encoder);
  return w;
}

// Zeroes every predictor parameter (eps == 0 everywhere); the codec is kept.
inline void zero_denoiser(Weights& w) {
  auto zero = [](Matrix& m) { std::fill(m.data().begin(), m.data().end(), 0.0f); };
  zero(w.latent_in);
  zero(w.time_proj);
  zero(w.latent_out);
  for (auto& b : w.blocks) {
    for (Matrix* m : {&b.ff_in, &b.ff_out, &b.self_q, &b.self_k, &b.self_v, &b.self_out, &b.cross_q,
                      &b.cross_k, &b.cross_v, &b.cross_out})
      zero(*m);
  }
}

// ---------------------------------------------------------------------------
// Prompts

inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

// One vector per whitespace token, drawn from SplitMix64 seeded with the
// FNV-1a hash of the token bytes. Entries are uniform with unit variance, so
// norms concentrate around sqrt(prompt_dim).
inline PromptEmbedding embed_prompt(std::string_view prompt, const DenoiserConfig& cfg) {
  auto tokens = tokenize(prompt);
  if (tokens.empty()) throw InputError("embed_prompt: empty prompt");
  Matrix vecs(tokens.size(), cfg.prompt_dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    SplitMix64 rng(fnv1a64(tokens[i]));
    for (auto& x : vecs.row(i)) x = static_cast<float>(rng.symmetric(std::sqrt(3.0)));
  }
  return {std::move(tokens), std::move(vecs)};
}

// Unconditional context: a single all-zero token.
inline PromptEmbedding null_prompt(const DenoiserConfig& cfg) { return {{}, Matrix(1, cfg.prompt_dim)}; }

// ---------------------------------------------------------------------------
// Codec

inline Tensor3 encode_image(const Tensor3& img, const Weights& w) {
  const auto& cfg = w.cfg;
  const std::size_t p = cfg.patch;
  if (img.c() != 3) throw ShapeError("encode_image: expected 3 colour channels, got " + std::to_string(img.c()));
  if (img.h() % p != 0 || img.w() % p != 0) {
    throw ShapeError("encode_image: image " + img.shape_string() + " is not a multiple of patch " +
                     std::to_string(p));
  }
  if (img.h() != cfg.image_h() || img.w() != cfg.image_w()) {
    throw ShapeError("encode_image: image " + img.shape_string() + " does not match model resolution " +
                     std::to_string(cfg.image_h()) + "x" + std::to_string(cfg.image_w()));
  }
  Matrix patches(cfg.latent_h * cfg.latent_w, cfg.patch_len());
  for (std::size_t py = 0; py < cfg.latent_h; ++py)
    for (std::size_t px = 0; px < cfg.latent_w; ++px) {
      auto row = patches.row(py * cfg.latent_w + px);
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch) row[(dy * p + dx) * 3 + ch] = img.at(py * p + dy, px * p + dx, ch);
    }
  return Tensor3::from_tokens(matmul(patches, w.encoder), cfg.latent_h, cfg.latent_w);
}

inline Tensor3 decode_latent(const Tensor3& z, const Weights& w) {
  const auto& cfg = w.cfg;
  if (z.h() != cfg.latent_h || z.w() != cfg.latent_w || z.c() != cfg.latent_channels) {
    throw ShapeError("decode_latent: latent " + z.shape_string() + " does not match model latent shape");
  }
  const std::size_t p = cfg.patch;
  const Matrix patches = matmul(z.to_tokens(), w.decoder);
  Tensor3 img(cfg.image_h(), cfg.image_w(), 3);
  for (std::size_t py = 0; py < cfg.latent_h; ++py)
    for (std::size_t px = 0; px < cfg.latent_w; ++px) {
      const auto row = patches.row(py * cfg.latent_w + px);
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch)
            img.at(py * p + dy, px * p + dx, ch) = std::clamp(row[(dy * p + dx) * 3 + ch], 0.0f, 1.0f);
    }
  return img;
}

// ---------------------------------------------------------------------------
// Forward

// Pairs (sin, cos) of pi * k * t / t_train for k = 1, 2, ...; smooth in t so
// neighbouring grid points see nearby embeddings.
inline Matrix timestep_embedding(std::size_t t, std::size_t t_train, std::size_t dim) {
  Matrix e(1, dim);
  const double s = static_cast<double>(t) / static_cast<double>(t_train);
  for (std::size_t j = 0; j < dim; ++j) {
    const double arg = std::numbers::pi * static_cast<double>(j / 2 + 1) * s;
    e(0, j) = static_cast<float>(j % 2 == 0 ? std::sin(arg) : std::cos(arg));
  }
  return e;
}

namespace detail {

inline void add_inplace(Matrix& x, const Matrix& y) {
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += y.data()[i];
  require_finite(x.data(), "forward");
}

inline Matrix tanh_of(Matrix m) {
  for (auto& x : m.data()) x = static_cast<float>(std::tanh(static_cast<double>(x)));
  return m;
}

}  // namespace detail

inline Tensor3 forward(const Tensor3& z_t, std::size_t t_index, const PromptEmbedding& c, const Weights& w,
                       SelfAttentionHook* hook = nullptr, ForwardTrace* trace = nullptr) {
  const auto& cfg = w.cfg;
  if (z_t.h() != cfg.latent_h || z_t.w() != cfg.latent_w || z_t.c() != cfg.latent_channels) {
    throw ShapeError("forward: latent " + z_t.shape_string() + " does not match model latent shape");
  }
  if (c.vectors.cols() != cfg.prompt_dim || c.vectors.rows() == 0) {
    throw ShapeError("forward: prompt embedding width " + std::to_string(c.vectors.cols()) +
                     " does not match prompt_dim " + std::to_string(cfg.prompt_dim));
  }
  if (t_index > cfg.t_train) throw DomainError("forward: timestep " + std::to_string(t_index) + " is off the training grid");
  const std::size_t d = cfg.model_dim;

  // Preconditioning: the blocks see z_t / sqrt(alpha_bar_t) and the head
  // output is scaled by sqrt(alpha_bar_t), so eps vanishes as noise grows.
  const double scale_t = std::sqrt(w.schedule[t_index]);
  Matrix z_in = z_t.to_tokens();
  for (auto& v : z_in.data()) v = static_cast<float>(v / scale_t);
  Matrix x = matmul(z_in, w.latent_in);
  const Matrix temb = matmul(timestep_embedding(t_index, cfg.t_train, cfg.timestep_dim), w.time_proj);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] += temb(0, j);
  }
  if (trace) {
    trace->tokens_in = x;
    trace->blocks.clear();
  }
  if (hook) hook->begin_forward(cfg.blocks);

  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const auto& bw = w.blocks[b];
    BlockTrace* bt = nullptr;
    if (trace) {
      trace->blocks.emplace_back();
      bt = &trace->blocks.back();
      bt->block_input = x;
    }

    detail::add_inplace(x, matmul(detail::tanh_of(matmul(x, bw.ff_in)), bw.ff_out));

    if (bt) bt->self_input = x;
    Matrix q = matmul(x, bw.self_q);
    Matrix k = matmul(x, bw.self_k);
    Matrix v = matmul(x, bw.self_v);
    if (hook) {
      const auto k_rows = k.rows(), k_cols = k.cols(), v_rows = v.rows(), v_cols = v.cols();
      auto kv = hook->on_self_attention(b, std::move(k), std::move(v));
      if (kv.k.rows() != k_rows || kv.k.cols() != k_cols || kv.v.rows() != v_rows || kv.v.cols() != v_cols) {
        throw InjectionError("forward: hook returned K/V of the wrong shape at block " + std::to_string(b));
      }
      k = std::move(kv.k);
      v = std::move(kv.v);
    }
    auto self = attention(q, k, v, d);
    if (hook) hook->on_attention_map(b, self.attn_map);
    const Matrix self_out = matmul(self.out, bw.self_out);
    if (bt) {
      bt->self_q = q;
      bt->self_k_used = k;
      bt->self_v_used = v;
      bt->self_out = self_out;
    }
    detail::add_inplace(x, self_out);

    if (bt) bt->cross_input = x;
    const Matrix cq = matmul(x, bw.cross_q);
    const Matrix ck = matmul(c.vectors, bw.cross_k);
    const Matrix cv = matmul(c.vectors, bw.cross_v);
    const Matrix cross_out = matmul(attention(cq, ck, cv, d).out, bw.cross_out);
    if (bt) {
      bt->cross_q = cq;
      bt->cross_k = ck;
      bt->cross_v = cv;
      bt->cross_out = cross_out;
    }
    detail::add_inplace(x, cross_out);
  }
  if (hook) hook->end_forward();

  Matrix eps = matmul(x, w.latent_out);
  for (auto& v : eps.data()) v = static_cast<float>(scale_t * v);
  return Tensor3::from_tokens(eps, cfg.latent_h, cfg.latent_w);
}

// ---------------------------------------------------------------------------
// Weight files

namespace detail {

inline constexpr float kWeightsFormat = 1.0f;
inline constexpr std::size_t kMetaSize = 22;

inline NamedTensor weights_meta(const DenoiserConfig& cfg) {
  std::vector<float> v = {kWeightsFormat,
                          static_cast<float>(cfg.latent_h),
                          static_cast<float>(cfg.latent_w),
                          static_cast<float>(cfg.latent_channels),
                          static_cast<float>(cfg.model_dim),
                          static_cast<float>(cfg.blocks),
                          static_cast<float>(cfg.prompt_dim),
                          static_cast<float>(cfg.timestep_dim),
                          static_cast<float>(cfg.patch),
                          static_cast<float>(cfg.t_train)};
  auto chunks = [&v](std::uint64_t bits) {
    for (int i = 0; i < 4; ++i) v.push_back(static_cast<float>((bits >> (16 * i)) & 0xffff));
  };
  chunks(cfg.seed);
  chunks(std::bit_cast<std::uint64_t>(cfg.beta_start));
  chunks(std::bit_cast<std::uint64_t>(cfg.beta_end));
  return {"meta", {static_cast<std::uint32_t>(v.size())}, std::move(v)};
}

}  // namespace detail

inline std::vector<NamedTensor> weights_to_tensors(const Weights& w) {
  std::vector<NamedTensor> out;
  out.push_back(detail::weights_meta(w.cfg));
  out.push_back(named("latent_in", w.latent_in));
  out.push_back(named("time_proj", w.time_proj));
  for (std::size_t b = 0; b < w.blocks.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    const auto& bw = w.blocks[b];
    out.push_back(named(p + "ff_in", bw.ff_in));
    out.push_back(named(p + "ff_out", bw.ff_out));
    out.push_back(named(p + "self_q", bw.self_q));
    out.push_back(named(p + "self_k", bw.self_k));
    out.push_back(named(p + "self_v", bw.self_v));
    out.push_back(named(p + "self_out", bw.self_out));
    out.push_back(named(p + "cross_q", bw.cross_q));
    out.push_back(named(p + "cross_k", bw.cross_k));
    out.push_back(named(p + "cross_v", bw.cross_v));
    out.push_back(named(p + "cross_out", bw.cross_out));
  }
  out.push_back(named("latent_out", w.latent_out));
  out.push_back(named("encoder", w.encoder));
  out.push_back(named("decoder", w.decoder));
  return out;
}

inline Weights weights_from_tensors(const std::vector<NamedTensor>& tensors) {
  std::size_t next = 0;
  auto take = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    if (next >= tensors.size()) throw FormatError("weights: missing tensor '" + name + "'");
    const auto& t = tensors[next++];
    if (t.name != name) throw FormatError("weights: expected tensor '" + name + "', found '" + t.name + "'");
    if (t.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols)}) {
      throw FormatError("weights: tensor '" + name + "' has the wrong shape");
    }
    try {
      return to_matrix(t);
    } catch (const DomainError& e) {
      throw FormatError("weights: tensor '" + name + "' holds non-finite values");
    }
  };

  if (tensors.empty() || tensors[0].name != "meta" || tensors[0].data.size() != detail::kMetaSize ||
      tensors[0].data[0] != detail::kWeightsFormat) {
    throw FormatError("weights: missing or malformed 'meta' tensor");
  }
  const auto& m = tensors[0].data;
  for (float f : m) {
    if (!(f >= 0.0f) || f != std::floor(f) || f > 16777216.0f) throw FormatError("weights: malformed 'meta' values");
  }
  next = 1;
  DenoiserConfig cfg;
  cfg.latent_h = static_cast<std::size_t>(m[1]);
  cfg.latent_w = static_cast<std::size_t>(m[2]);
  cfg.latent_channels = static_cast<std::size_t>(m[3]);
  cfg.model_dim = static_cast<std::size_t>(m[4]);
  cfg.blocks = static_cast<std::size_t>(m[5]);
  cfg.prompt_dim = static_cast<std::size_t>(m[6]);
  cfg.timestep_dim = static_cast<std::size_t>(m[7]);
  cfg.patch = static_cast<std::size_t>(m[8]);
  cfg.t_train = static_cast<std::size_t>(m[9]);
  auto unchunk = [&m](std::size_t at) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 4; ++i) {
      if (m[at + i] > 65535.0f) throw FormatError("weights: malformed 'meta' values");
      bits |= static_cast<std::uint64_t>(m[at + i]) << (16 * i);
    }
    return bits;
  };
  cfg.seed = unchunk(10);
  cfg.beta_start = std::bit_cast<double>(unchunk(14));
  cfg.beta_end = std::bit_cast<double>(unchunk(18));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weights: ") + e.what());
  }

  const auto d = cfg.model_dim;
  Weights w;
  w.cfg = cfg;
  w.schedule = make_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end);
  w.latent_in = take("latent_in", cfg.latent_channels, d);
  w.time_proj = take("time_proj", cfg.timestep_dim, d);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    BlockWeights bw;
    bw.ff_in = take(p + "ff_in", d, cfg.ff_dim());
    bw.ff_out = take(p + "ff_out", cfg.ff_dim(), d);
    bw.self_q = take(p + "self_q", d, d);
    bw.self_k = take(p + "self_k", d, d);
    bw.self_v = take(p + "self_v", d, d);
    bw.self_out = take(p + "self_out", d, d);
    bw.cross_q = take(p + "cross_q", d, d);
    bw.cross_k = take(p + "cross_k", cfg.prompt_dim, d);
    bw.cross_v = take(p + "cross_v", cfg.prompt_dim, d);
    bw.cross_out = take(p + "cross_out", d, d);
    w.blocks.push_back(std::move(bw));
  }
  w.latent_out = take("latent_out", d, cfg.latent_channels);
  w.encoder = take("encoder", cfg.patch_len(), cfg.latent_channels);
  w.decoder = take("decoder", cfg.latent_channels, cfg.patch_len());
  if (next != tensors.size()) throw FormatError("weights: unexpected extra tensors");
  return w;
}

inline void save_weights(const Weights& w, const std::filesystem::path& path) {
  write_vtsr(path, weights_to_tensors(w));
}

inline Weights load_weights(const std::filesystem::path& path) { return weights_from_tensors(read_vtsr(path)); }

}  // namespace visctrl
