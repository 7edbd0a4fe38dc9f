#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "visctrl/numerics.hpp"

using namespace visctrl;

TEST(Matrix, RejectsBadData) {
  EXPECT_THROW(Matrix(2, 2, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Matrix(1, 2, {1.0f, std::nanf("")}), DomainError);
  EXPECT_NO_THROW(Matrix(1, 2, {1, 2}));
}

TEST(Tensor3, TokenRoundTrip) {
  std::mt19937_64 rng(3);
  const Tensor3 t = oracle::random_tensor(rng, 3, 5, 4);
  const Matrix tok = t.to_tokens();
  EXPECT_EQ(tok.rows(), 15u);
  EXPECT_EQ(tok.cols(), 4u);
  EXPECT_EQ(tok(1 * 5 + 2, 3), t.at(1, 2, 3));
  EXPECT_TRUE(Tensor3::from_tokens(tok, 3, 5) == t);
  EXPECT_THROW(Tensor3::from_tokens(tok, 4, 5), ShapeError);
}

TEST(Matmul, MatchesTripleLoopBitwise) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 17);
    const auto m = dim(rng), k = dim(rng), n = dim(rng);
    const Matrix a = oracle::random_matrix(rng, m, k, 2.0);
    const Matrix b = oracle::random_matrix(rng, k, n, 2.0);
    EXPECT_TRUE(matmul(a, b) == oracle::matmul(a, b)) << m << "x" << k << "x" << n;
  }
}

TEST(Matmul, IdentityAndShapeErrors) {
  std::mt19937_64 rng(5);
  const Matrix a = oracle::random_matrix(rng, 4, 6);
  EXPECT_TRUE(matmul(a, Matrix::identity(6)) == a);
  EXPECT_TRUE(matmul(Matrix::identity(4), a) == a);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Matmul, Transpose) {
  std::mt19937_64 rng(6);
  const Matrix a = oracle::random_matrix(rng, 3, 7);
  const Matrix t = transpose(a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(a(i, j), t(j, i));
  EXPECT_TRUE(transpose(t) == a);
}

TEST(Softmax, StableForLargeLogits) {
  Matrix m(1, 3, {1000.0f, 1000.0f, -1000.0f});
  const Matrix s = softmax_rows(m);
  EXPECT_FLOAT_EQ(s(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(s(0, 1), 0.5f);
  EXPECT_EQ(s(0, 2), 0.0f);
}

TEST(Softmax, MatchesDirectFormula) {
  std::mt19937_64 rng(8);
  const Matrix m = oracle::random_matrix(rng, 6, 9, 4.0);
  const Matrix s = softmax_rows(m);
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<double> x;
    for (std::size_t j = 0; j < 9; ++j) x.push_back(m(r, j));
    const auto p = oracle::softmax_direct(x);
    double sum = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_NEAR(s(r, j), p[j], 1e-7);
      sum += s(r, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Attention, MatchesTwoStageOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto nq = dim(rng), nk = dim(rng), d = dim(rng), dv = dim(rng);
    const Matrix q = oracle::random_matrix(rng, nq, d, 2.0);
    const Matrix k = oracle::random_matrix(rng, nk, d, 2.0);
    const Matrix v = oracle::random_matrix(rng, nk, dv, 2.0);
    const auto got = attention(q, k, v, d);
    const auto want = oracle::attention(q, k, v, d);
    for (std::size_t i = 0; i < got.attn_map.size(); ++i) EXPECT_NEAR(got.attn_map.data()[i], want.map.data()[i], 1e-9);
    for (std::size_t i = 0; i < got.out.size(); ++i) EXPECT_NEAR(got.out.data()[i], want.out.data()[i], 1e-9);
  }
}

TEST(Attention, OutputsInConvexHullOfValues) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix q = oracle::random_matrix(rng, 5, 4, 3.0);
    const Matrix k = oracle::random_matrix(rng, 7, 4, 3.0);
    const Matrix v = oracle::random_matrix(rng, 7, 3, 3.0);
    const auto r = attention(q, k, v, 4);
    for (std::size_t c = 0; c < 3; ++c) {
      float lo = v(0, c), hi = v(0, c);
      for (std::size_t j = 0; j < 7; ++j) {
        lo = std::min(lo, v(j, c));
        hi = std::max(hi, v(j, c));
      }
      for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_GE(r.out(i, c), lo - 1e-6f);
        EXPECT_LE(r.out(i, c), hi + 1e-6f);
      }
    }
  }
}

TEST(Attention, KeyValuePermutationInvariant) {
  std::mt19937_64 rng(91);
  const Matrix q = oracle::random_matrix(rng, 4, 6);
  const Matrix k = oracle::random_matrix(rng, 9, 6);
  const Matrix v = oracle::random_matrix(rng, 9, 5);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix kp(9, 6), vp(9, 5);
  for (std::size_t j = 0; j < 9; ++j) {
    for (std::size_t c = 0; c < 6; ++c) kp(j, c) = k(perm[j], c);
    for (std::size_t c = 0; c < 5; ++c) vp(j, c) = v(perm[j], c);
  }
  const auto a = attention(q, k, v, 6);
  const auto b = attention(q, kp, vp, 6);
  for (std::size_t i = 0; i < a.out.size(); ++i) EXPECT_NEAR(a.out.data()[i], b.out.data()[i], 1e-6);
}

TEST(Attention, SingleKeyReturnsItsValue) {
  const Matrix q(3, 2, {1, 2, 3, 4, 5, 6});
  const Matrix k(1, 2, {0.5f, -1});
  const Matrix v(1, 3, {7, 8, 9});
  const auto r = attention(q, k, v, 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(r.out(i, c), v(0, c));
}

TEST(Attention, ShapeErrors) {
  const Matrix q(2, 3), k(4, 3), v(4, 2), v_bad(3, 2), k_bad(4, 2);
  EXPECT_THROW(attention(q, k_bad, v, 3), ShapeError);
  EXPECT_THROW(attention(q, k, v_bad, 3), ShapeError);
  EXPECT_THROW(attention(q, k, v, 4), ShapeError);
  EXPECT_THROW(attention(q, Matrix(0, 3), Matrix(0, 2), 3), ShapeError);
}
