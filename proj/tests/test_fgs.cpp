#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "visctrl/fgs.hpp"

using namespace visctrl;

namespace {

Weights seeded(std::uint64_t seed) {
  DenoiserConfig c;
  c.seed = seed;
  return init_weights(c);
}

double distance(const Tensor3& a, const Tensor3& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a.data()[i]) - b.data()[i];
    s += d * d;
  }
  return static_cast<double>(std::sqrt(s));
}

FrameSequence three_frames() {
  FrameSequence seq;
  seq.target_prompt = "a blue ball";
  for (int f = 0; f < 3; ++f) {
    seq.frames.push_back(fixtures::disc_scene(28 + 3 * f, 32, 12, 0.9f, 0.3f, 0.1f));
    seq.masks.push_back(fixtures::disc_mask(28 + 3 * f, 32, 12));
  }
  return seq;
}

ReferenceSet refs(std::size_t count, std::uint64_t seed = 11) {
  ReferenceSet set;
  set.sampler_seed = seed;
  for (std::size_t i = 0; i < count; ++i) {
    set.refs.push_back({fixtures::disc_scene(30 + 2.0 * i, 30, 13, 0.1f, 0.2f, 0.9f - 0.2f * i),
                        "a blue ball view " + std::to_string(i)});
  }
  return set;
}

}  // namespace

TEST(Sampler, SingleReferenceAlwaysFirst) {
  for (std::size_t n = 1; n <= 50; ++n) EXPECT_EQ(sample_reference(77, 1, n, n % 3), 0u);
}

TEST(Sampler, UniformFrequencies) {
  for (std::size_t count : {2u, 3u}) {
    std::vector<double> hits(count);
    const std::size_t draws = 3000;
    for (std::size_t i = 1; i <= draws; ++i) ++hits[sample_reference(5, count, i, 0)];
    for (double h : hits) EXPECT_NEAR(h / draws, 1.0 / count, 0.05);
  }
}

TEST(Sampler, KeyedAndRepeatable) {
  EXPECT_EQ(sample_reference(3, 3, 4, 2), sample_reference(3, 3, 4, 2));
  std::size_t differs = 0;
  for (std::size_t n = 1; n <= 40; ++n) differs += sample_reference(3, 3, n, 0) != sample_reference(3, 3, n, 1);
  EXPECT_GT(differs, 0u);
  EXPECT_THROW(sample_reference(0, 0, 1), InputError);
  EXPECT_THROW(sample_reference(0, 2, 0), InputError);
}

TEST(FgsUpdate, EndpointsAndMidpoint) {
  const auto w = seeded(1);
  Engine e(w);
  std::mt19937_64 rng(1);
  const Tensor3 prev = oracle::random_tensor(rng, 8, 8, 4);
  const Tensor3 z = oracle::random_tensor(rng, 8, 8, 4);
  const auto c = e.embed("x");
  const auto grid = e.grid(5);
  const Tensor3 inv = e.invert_latent(z, c, grid, InvertCondition::Unconditional);
  EXPECT_TRUE(oracle::bitwise_equal(fgs_update(e, prev, z, c, 0.0, grid, InvertCondition::Unconditional), prev));
  EXPECT_TRUE(oracle::bitwise_equal(fgs_update(e, prev, z, c, 1.0, grid, InvertCondition::Unconditional), inv));
  const Tensor3 mid = fgs_update(e, prev, z, c, 0.5, grid, InvertCondition::Unconditional);
  for (std::size_t i = 0; i < mid.size(); ++i) {
    EXPECT_FLOAT_EQ(mid.data()[i], static_cast<float>(0.5 * inv.data()[i] + 0.5 * prev.data()[i]));
  }
  EXPECT_THROW(fgs_update(e, prev, z, c, 1.2, grid, InvertCondition::Unconditional), DomainError);
  EXPECT_THROW(fgs_update(e, Tensor3(4, 4, 4), z, c, 0.5, grid, InvertCondition::Unconditional), ShapeError);
}

TEST(FgsUpdate, NormLaw) {
  const auto w = seeded(2);
  auto seq = three_frames();
  seq.frames.resize(1);
  seq.masks.resize(1);
  for (double alpha : {0.0, 0.3, 0.7, 1.0}) {
    EditConfig cfg;
    cfg.alpha = alpha;
    const auto res = run_multiview(w, seq, refs(2), cfg);
    const auto& its = res.frames[0].loop.iterations;
    ASSERT_EQ(its.size(), 5u);
    for (std::size_t n = 1; n < its.size(); ++n) {
      const double lhs = distance(its[n].z_T, its[n - 1].z_T);
      const double rhs = alpha * distance(its[n].inverted, its[n - 1].z_T);
      EXPECT_NEAR(lhs, rhs, 1e-6 * std::max(1.0, rhs)) << "alpha " << alpha << " n " << n;
      if (alpha == 0.0) {
        EXPECT_TRUE(oracle::bitwise_equal(its[n].z_T, its[0].z_T));
      }
      if (alpha == 1.0) {
        EXPECT_TRUE(oracle::bitwise_equal(its[n].z_T, its[n].inverted));
      }
    }
  }
}

TEST(Multiview, AlphaOneSingleReferenceMatchesPlainEdit) {
  const auto w = seeded(3);
  auto seq = three_frames();
  const auto set = refs(1);
  EditConfig cfg;
  cfg.alpha = 1.0;
  const auto mv = run_multiview(w, seq, set, cfg);
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const EditInputs in{set.refs[0].image, seq.frames[f], set.refs[0].prompt, seq.target_prompt, seq.masks[f]};
    const auto plain = run_visctrl(w, in, cfg);
    EXPECT_EQ(to_image8(mv.frames[f].edited), to_image8(plain.edited));
    EXPECT_TRUE(oracle::bitwise_equal(mv.frames[f].loop.z0, plain.loop.z0));
  }
}

TEST(Multiview, IdenticalFramesGiveIdenticalOutputs) {
  const auto w = seeded(4);
  FrameSequence seq;
  seq.target_prompt = "a ball";
  for (int f = 0; f < 3; ++f) {
    seq.frames.push_back(fixtures::disc_scene(32, 32, 12, 0.9f, 0.3f, 0.1f));
    seq.masks.push_back(fixtures::disc_mask(32, 32, 12));
  }
  EditConfig cfg;
  cfg.alpha = 0.5;
  cfg.frame_keyed_sampler = false;
  const auto res = run_multiview(w, seq, refs(3), cfg);
  for (const auto& row : res.consistency) {
    EXPECT_EQ(row.edited_mad, 0.0);
    EXPECT_EQ(row.bg_max_error, 0.0);
  }
  for (double bg : res.frame_bg_mad) EXPECT_EQ(bg, 0.0);
}

TEST(Multiview, ThreadCountDoesNotChangeResults) {
  const auto w = seeded(5);
  const auto seq = three_frames();
  EditConfig cfg;
  cfg.alpha = 0.7;
  cfg.iterations = 3;
  const auto a = run_multiview(w, seq, refs(3), cfg, 1);
  const auto b = run_multiview(w, seq, refs(3), cfg, 3);
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    EXPECT_TRUE(oracle::bitwise_equal(a.frames[f].edited, b.frames[f].edited));
    EXPECT_EQ(a.frames[f].counter.evaluations, b.frames[f].counter.evaluations);
  }
}

TEST(Multiview, SamplerPicksRecordedReferences) {
  const auto w = seeded(6);
  const auto seq = three_frames();
  EditConfig cfg;
  cfg.alpha = 0.5;
  const auto set = refs(3, 99);
  const auto res = run_multiview(w, seq, set, cfg);
  for (std::size_t f = 0; f < seq.frames.size(); ++f)
    for (const auto& it : res.frames[f].loop.iterations) EXPECT_EQ(it.reference_index, sample_reference(set, it.n, f));
}

TEST(Multiview, ReferenceOrderMattersOnlyThroughSampling) {
  // With a single reference duplicated, order cannot matter at all.
  const auto w = seeded(7);
  auto seq = three_frames();
  seq.frames.resize(1);
  seq.masks.resize(1);
  auto one = refs(1);
  ReferenceSet dup = one;
  dup.refs.push_back(one.refs[0]);
  EditConfig cfg;
  cfg.alpha = 0.5;
  cfg.iterations = 3;
  const auto a = run_multiview(w, seq, one, cfg);
  const auto b = run_multiview(w, seq, dup, cfg);
  EXPECT_TRUE(oracle::bitwise_equal(a.frames[0].edited, b.frames[0].edited));
}

TEST(Multiview, InputErrors) {
  const auto w = seeded(1);
  auto seq = three_frames();
  EditConfig cfg;
  EXPECT_THROW(run_multiview(w, seq, ReferenceSet{}, cfg), InputError);
  EXPECT_THROW(run_multiview(w, seq, refs(4), cfg), InputError);
  seq.masks.pop_back();
  EXPECT_THROW(run_multiview(w, seq, refs(1), cfg), InputError);
  seq = three_frames();
  seq.frames[1] = Image(32, 32, 3);
  EXPECT_THROW(run_multiview(w, seq, refs(1), cfg), ShapeError);
  seq = three_frames();
  auto bad = refs(1);
  bad.refs[0].image = Image(32, 32, 3);
  EXPECT_THROW(run_multiview(w, seq, bad, cfg), ShapeError);
}
