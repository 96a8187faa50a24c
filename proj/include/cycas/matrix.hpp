#pragma once

// Dense row-major matrices and the handful of differentiable operations the
// cycle-association objective is built from. Every forward op has a
// hand-derived backward; there is no tape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cycas {

/// Raised when a column is too short to be projected onto the unit sphere.
class DegenerateEmbedding : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), fill) {}

  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw ShapeError("matrix data length does not match rows*cols");
    }
  }

  /// Row-wise literal: {{1, 2}, {3, 4}}.
  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows)
      : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
    data_.reserve(checked_size(rows_, cols_));
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const BasicMatrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  BasicMatrix transposed() const {
    BasicMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  BasicMatrix& operator+=(const BasicMatrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  BasicMatrix& operator-=(const BasicMatrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  BasicMatrix& operator*=(T s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend BasicMatrix operator+(BasicMatrix a, const BasicMatrix& b) { return a += b; }
  friend BasicMatrix operator-(BasicMatrix a, const BasicMatrix& b) { return a -= b; }
  friend BasicMatrix operator*(BasicMatrix a, T s) { return a *= s; }
  friend BasicMatrix operator*(T s, BasicMatrix a) { return a *= s; }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

 private:
  static std::size_t checked_size(std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw ShapeError("matrix dimensions must be positive");
    return rows * cols;
  }

  void require_same_shape(const BasicMatrix& o, const char* op) const {
    if (!same_shape(o)) throw ShapeError(std::string("shape mismatch in ") + op);
  }

  std::size_t rows_;
  std::size_t cols_;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;

inline constexpr double kNormFloor = 1e-12;

template <typename T>
T max_abs_diff(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

namespace detail {

template <typename T>
T column_norm(const BasicMatrix<T>& m, std::size_t c) {
  T s{0};
  for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, c) * m(r, c);
  return std::sqrt(s);
}

template <typename T>
T checked_column_norm(const BasicMatrix<T>& m, std::size_t c, T floor) {
  const T n = column_norm(m, c);
  if (!std::isfinite(n)) throw DegenerateEmbedding("column " + std::to_string(c) + " has non-finite norm");
  if (!(n >= floor)) {
    throw DegenerateEmbedding("column " + std::to_string(c) + " has norm below floor");
  }
  return n;
}

}  // namespace detail

/// Scales every column to unit Euclidean length.
template <typename T>
BasicMatrix<T> l2_normalize_columns(const BasicMatrix<T>& m, T floor = T(kNormFloor)) {
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const T n = detail::checked_column_norm(m, c, floor);
    for (std::size_t r = 0; r < m.rows(); ++r) out(r, c) = m(r, c) / n;
  }
  return out;
}

/// Gradient through column normalization: per column, (I - x̂x̂ᵀ) g / ‖x‖.
template <typename T>
BasicMatrix<T> l2_normalize_backward(const BasicMatrix<T>& m, const BasicMatrix<T>& upstream,
                                     T floor = T(kNormFloor)) {
  if (!m.same_shape(upstream)) throw ShapeError("l2_normalize_backward: shape mismatch");
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const T n = detail::checked_column_norm(m, c, floor);
    T radial{0};
    for (std::size_t r = 0; r < m.rows(); ++r) radial += (m(r, c) / n) * upstream(r, c);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      out(r, c) = (upstream(r, c) - radial * (m(r, c) / n)) / n;
    }
  }
  return out;
}

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " disagree");
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

/// Returns (upstream·Bᵀ, Aᵀ·upstream).
template <typename T>
std::pair<BasicMatrix<T>, BasicMatrix<T>> matmul_backward(const BasicMatrix<T>& a,
                                                          const BasicMatrix<T>& b,
                                                          const BasicMatrix<T>& upstream) {
  if (upstream.rows() != a.rows() || upstream.cols() != b.cols()) {
    throw ShapeError("matmul_backward: upstream shape mismatch");
  }
  return {matmul(upstream, b.transposed()), matmul(a.transposed(), upstream)};
}

/// Row-wise softmax of T·M. The row max is subtracted before exponentiating.
template <typename T>
BasicMatrix<T> row_softmax(const BasicMatrix<T>& m, T temperature) {
  if (!(temperature > T{0})) throw std::invalid_argument("row_softmax: temperature must be positive");
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto in = m.row(r);
    auto o = out.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum{0};
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(temperature * (in[c] - mx));
      sum += o[c];
    }
    for (auto& v : o) v /= sum;
  }
  return out;
}

/// Backward of row_softmax given its output Y: T · Y ⊙ (g − rowsum(g ⊙ Y)).
template <typename T>
BasicMatrix<T> row_softmax_backward(const BasicMatrix<T>& softmax_out, const BasicMatrix<T>& upstream,
                                    T temperature) {
  if (!softmax_out.same_shape(upstream)) throw ShapeError("row_softmax_backward: shape mismatch");
  BasicMatrix<T> out(upstream.rows(), upstream.cols());
  for (std::size_t r = 0; r < upstream.rows(); ++r) {
    const auto y = softmax_out.row(r);
    const auto g = upstream.row(r);
    T dot{0};
    for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * g[c];
    auto o = out.row(r);
    for (std::size_t c = 0; c < y.size(); ++c) o[c] = temperature * y[c] * (g[c] - dot);
  }
  return out;
}

/// Central-difference check of an analytic gradient.
///
/// Returns max over entries of |fd − analytic| / max(1, |analytic|). Throws
/// std::domain_error when f is non-finite at any probe point.
template <typename T>
T finite_difference_check(const std::function<T(const BasicMatrix<T>&)>& f, const BasicMatrix<T>& x,
                          const BasicMatrix<T>& analytic, T h = T(1e-6)) {
  if (!x.same_shape(analytic)) throw ShapeError("finite_difference_check: gradient shape mismatch");
  BasicMatrix<T> probe = x;
  T worst{0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = x.data()[i];
    probe.data()[i] = orig + h;
    const T up = f(probe);
    probe.data()[i] = orig - h;
    const T down = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_difference_check: non-finite function value");
    }
    const T fd = (up - down) / (T{2} * h);
    const T an = analytic.data()[i];
    worst = std::max(worst, std::abs(fd - an) / std::max(T{1}, std::abs(an)));
  }
  return worst;
}

}  // namespace cycas
