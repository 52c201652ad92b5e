// Minimal row-major dense matrix. Only the operations the model needs;
// loops are plain (ikj) and deterministic, which keeps runs bit-stable.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedais/common.hpp"

namespace fedais {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), a_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {a_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {a_.data() + i * cols_, cols_}; }

  std::vector<double>& data() { return a_; }
  const std::vector<double>& data() const { return a_; }

  bool operator==(const Matrix&) const = default;

  bool all_finite() const {
    for (double v : a_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> a_;
};

inline void check_dims(bool ok, const char* what) {
  if (!ok) throw ParameterError(std::string("dimension mismatch: ") + what);
}

// C += A * B
inline void add_matmul(Matrix& c, const Matrix& a, const Matrix& b) {
  check_dims(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(), "A*B");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
}

// C += A^T * B
inline void add_matmul_tn(Matrix& c, const Matrix& a, const Matrix& b) {
  check_dims(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), "A^T*B");
  for (std::size_t k = 0; k < a.rows(); ++k)
    for (std::size_t i = 0; i < a.cols(); ++i) {
      double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aki * b(k, j);
    }
}

// C += A * B^T
inline void add_matmul_nt(Matrix& c, const Matrix& a, const Matrix& b) {
  check_dims(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(), "A*B^T");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) += s;
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  add_matmul(c, a, b);
  return c;
}

inline void add_row_broadcast(Matrix& m, std::span<const double> bias) {
  check_dims(bias.size() == m.cols(), "row broadcast");
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) += bias[j];
}

inline std::vector<double> col_sums(const Matrix& m) {
  std::vector<double> s(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s[j] += m(i, j);
  return s;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double l2_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace fedais
