#pragma once

// Dense kernels shared by the denoiser and the attention hooks.
//
// Storage is 32-bit float; every reduction accumulates in double and rounds
// once when the result is stored. Loop orders are fixed so results are
// bit-stable regardless of optimisation flags.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "visctrl/error.hpp"

namespace visctrl {

namespace detail {

inline void require_finite(std::span<const float> data, const char* where) {
  for (float v : data) {
    if (!std::isfinite(v)) throw DomainError(std::string(where) + ": non-finite value");
  }
}

inline std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " does not match " +
                       detail::dims(rows_, cols_));
    }
    detail::require_finite(data_, "Matrix");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// h-major, then w, then c.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t h, std::size_t w, std::size_t c) : h_(h), w_(w), c_(c), data_(h * w * c, 0.0f) {}
  Tensor3(std::size_t h, std::size_t w, std::size_t c, std::vector<float> data)
      : h_(h), w_(w), c_(c), data_(std::move(data)) {
    if (data_.size() != h_ * w_ * c_) throw ShapeError("Tensor3: data length does not match shape");
    detail::require_finite(data_, "Tensor3");
  }

  std::size_t h() const noexcept { return h_; }
  std::size_t w() const noexcept { return w_; }
  std::size_t c() const noexcept { return c_; }
  std::size_t size() const noexcept { return data_.size(); }

  float& at(std::size_t y, std::size_t x, std::size_t ch) { return data_[(y * w_ + x) * c_ + ch]; }
  float at(std::size_t y, std::size_t x, std::size_t ch) const { return data_[(y * w_ + x) * c_ + ch]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const Tensor3& o) const noexcept { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
  std::string shape_string() const {
    return std::to_string(h_) + "x" + std::to_string(w_) + "x" + std::to_string(c_);
  }

  // (h*w) x c token view; lossless in both directions.
  Matrix to_tokens() const { return Matrix(h_ * w_, c_, data_); }
  static Tensor3 from_tokens(const Matrix& m, std::size_t h, std::size_t w) {
    if (m.rows() != h * w) throw ShapeError("Tensor3::from_tokens: row count is not h*w");
    return Tensor3(h, w, m.cols(), std::vector<float>(m.data().begin(), m.data().end()));
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::size_t c_ = 0;
  std::vector<float> data_;
};

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

// Each output element is the ascending-k double sum of a(i,k)*b(k,j).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + detail::dims(a.rows(), a.cols()) + " by " +
                     detail::dims(b.rows(), b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * static_cast<double>(brow[j]);
    }
    auto orow = out.row(i);
    for (std::size_t j = 0; j < b.cols(); ++j) orow[j] = static_cast<float>(acc[j]);
  }
  detail::require_finite(out.data(), "matmul");
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  detail::require_finite(out.data(), "add");
  return out;
}

namespace detail {

// Stable softmax of one row in double precision, written into `out`.
inline void softmax_row(std::span<const double> logits, std::span<float> out) {
  double peak = -INFINITY;
  for (double v : logits) peak = std::max(peak, v);
  std::vector<double> e(logits.size());
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    e[j] = std::exp(logits[j] - peak);
    total += e[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = static_cast<float>(e[j] / total);
}

}  // namespace detail

inline Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  std::vector<double> logits(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t j = 0; j < m.cols(); ++j) logits[j] = row[j];
    detail::softmax_row(logits, out.row(r));
  }
  return out;
}

struct AttentionResult {
  Matrix out;
  Matrix attn_map;
};

// Two-stage scaled dot-product attention. Stage one stores the attention map
// softmax(q k^T / sqrt(d)); stage two multiplies it with v. The logits are
// formed in double and never rounded to float before the softmax.
inline AttentionResult attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d) {
  if (q.cols() != d || k.cols() != d) {
    throw ShapeError("attention: q/k width must equal d=" + std::to_string(d) + " (got " +
                     std::to_string(q.cols()) + ", " + std::to_string(k.cols()) + ")");
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: k has " + std::to_string(k.rows()) + " rows but v has " +
                     std::to_string(v.rows()));
  }
  if (k.rows() == 0) throw ShapeError("attention: no keys");

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix attn_map(q.rows(), k.rows());
  std::vector<double> logits(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const auto qi = q.row(i);
    for (std::size_t j = 0; j < k.rows(); ++j) {
      const auto kj = k.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(qi[c]) * kj[c];
      logits[j] = dot * scale;
    }
    detail::softmax_row(logits, attn_map.row(i));
  }
  Matrix out = matmul(attn_map, v);
  return {std::move(out), std::move(attn_map)};
}

}  // namespace visctrl
