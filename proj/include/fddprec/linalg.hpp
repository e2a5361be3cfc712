#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include "fddprec/complex.hpp"
#include "fddprec/errors.hpp"

namespace fddprec {

// Dense complex matrix in plain (non-differentiable) arithmetic, used by
// the classical baselines where readability beats tape integration.
struct CMat {
  std::size_t rows = 0, cols = 0;
  std::vector<std::complex<double>> a;

  CMat() = default;
  CMat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c) {}

  std::complex<double>& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  const std::complex<double>& operator()(std::size_t i, std::size_t j) const {
    return a[i * cols + j];
  }

  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

inline CMat cmul(const CMat& x, const CMat& y) {
  if (x.cols != y.rows)
    throw shape_error("cmul: inner dimensions disagree: " + x.shape_str() + " vs " +
                      y.shape_str());
  CMat z(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t p = 0; p < x.cols; ++p) {
      const auto v = x(i, p);
      for (std::size_t j = 0; j < y.cols; ++j) z(i, j) += v * y(p, j);
    }
  return z;
}

inline CMat cherm(const CMat& x) {
  CMat z(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) z(j, i) = std::conj(x(i, j));
  return z;
}

inline double frob2(const CMat& x) {
  double s = 0.0;
  for (const auto& v : x.a) s += std::norm(v);
  return s;
}

// Solves A X = B for square A via partial-pivot LU. Reports a singularity
// error (with a crude condition estimate from the pivot-magnitude spread)
// when the matrix is effectively rank deficient.
inline CMat lu_solve(CMat A, CMat B, double cond_threshold = 1e12) {
  if (A.rows != A.cols)
    throw shape_error("lu_solve: matrix not square: " + A.shape_str());
  if (B.rows != A.rows)
    throw shape_error("lu_solve: rhs rows " + B.shape_str() + " vs matrix " + A.shape_str());
  const std::size_t n = A.rows;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;

  double max_pivot = 0.0, min_pivot = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t best = col;
    double best_mag = std::abs(A(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double mag = std::abs(A(r, col));
      if (mag > best_mag) {
        best_mag = mag;
        best = r;
      }
    }
    if (best != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(A(col, j), A(best, j));
      for (std::size_t j = 0; j < B.cols; ++j) std::swap(B(col, j), B(best, j));
    }
    const double pivot_mag = std::abs(A(col, col));
    max_pivot = std::max(max_pivot, pivot_mag);
    min_pivot = col == 0 ? pivot_mag : std::min(min_pivot, pivot_mag);
    if (pivot_mag == 0.0)
      throw singular_matrix_error(
          "lu_solve: exact zero pivot at column " + std::to_string(col),
          std::numeric_limits<double>::infinity());
    const auto inv_pivot = 1.0 / A(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const auto f = A(r, col) * inv_pivot;
      if (f == std::complex<double>(0.0, 0.0)) continue;
      A(r, col) = f;
      for (std::size_t j = col + 1; j < n; ++j) A(r, j) -= f * A(col, j);
      for (std::size_t j = 0; j < B.cols; ++j) B(r, j) -= f * B(col, j);
    }
  }
  const double cond_estimate = min_pivot > 0.0 ? max_pivot / min_pivot
                                               : std::numeric_limits<double>::infinity();
  if (cond_estimate > cond_threshold)
    throw singular_matrix_error("lu_solve: matrix effectively singular (pivot-ratio estimate " +
                                    std::to_string(cond_estimate) + ")",
                                cond_estimate);

  // Back substitution on the upper triangle.
  CMat X = B;
  for (std::size_t j = 0; j < X.cols; ++j)
    for (std::size_t ii = n; ii-- > 0;) {
      auto s = X(ii, j);
      for (std::size_t p = ii + 1; p < n; ++p) s -= A(ii, p) * X(p, j);
      X(ii, j) = s / A(ii, ii);
    }
  return X;
}

template <typename T>
CMat to_cmat(const ComplexMatrix<T>& m) {
  CMat z(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      z(i, j) = {static_cast<double>(m.re.at(i, j)), static_cast<double>(m.im.at(i, j))};
  return z;
}

template <typename T = double>
ComplexMatrix<T> from_cmat(const CMat& m) {
  ComplexMatrix<T> z(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) {
      z.re.at(i, j) = static_cast<T>(m(i, j).real());
      z.im.at(i, j) = static_cast<T>(m(i, j).imag());
    }
  return z;
}

}  // namespace fddprec
