#pragma once

#include "fddprec/tensor.hpp"

namespace fddprec {

// Complex matrix carried as separate real/imaginary planes so every
// complex operation stays inside the real-valued tape.
template <typename T>
struct ComplexMatrix {
  Tensor<T> re, im;

  ComplexMatrix() = default;
  ComplexMatrix(Tensor<T> r, Tensor<T> i) : re(std::move(r)), im(std::move(i)) {
    if (re.rows() != im.rows() || re.cols() != im.cols())
      throw shape_error("complex: re " + re.shape_str() + " vs im " + im.shape_str());
  }
  ComplexMatrix(std::size_t rows, std::size_t cols)
      : re(rows, cols), im(rows, cols) {}

  std::size_t rows() const { return re.rows(); }
  std::size_t cols() const { return re.cols(); }
};

// (Ar + jAi)(Br + jBi) = (ArBr - AiBi) + j(ArBi + AiBr)
template <typename T>
ComplexMatrix<T> cmatmul(const ComplexMatrix<T>& a, const ComplexMatrix<T>& b) {
  return {sub(matmul(a.re, b.re), matmul(a.im, b.im)),
          add(matmul(a.re, b.im), matmul(a.im, b.re))};
}

template <typename T>
ComplexMatrix<T> cadd(const ComplexMatrix<T>& a, const ComplexMatrix<T>& b) {
  return {add(a.re, b.re), add(a.im, b.im)};
}

template <typename T>
ComplexMatrix<T> csub(const ComplexMatrix<T>& a, const ComplexMatrix<T>& b) {
  return {sub(a.re, b.re), sub(a.im, b.im)};
}

// Conjugate transpose.
template <typename T>
ComplexMatrix<T> hermitian(const ComplexMatrix<T>& a) {
  return {transpose(a.re), scale(transpose(a.im), T(-1))};
}

// Elementwise squared magnitude |a|^2, a real tensor.
template <typename T>
Tensor<T> abs2(const ComplexMatrix<T>& a) {
  return add(square(a.re), square(a.im));
}

template <typename T>
ComplexMatrix<T> cscale(const ComplexMatrix<T>& a, T c) {
  return {scale(a.re, c), scale(a.im, c)};
}

// Scale both planes by a 1x1 real tensor (gradient flows into the scalar).
template <typename T>
ComplexMatrix<T> cmul_bcast(const ComplexMatrix<T>& a, const Tensor<T>& s) {
  return {mul_bcast(a.re, s), mul_bcast(a.im, s)};
}

// Columnwise scale by a 1 x cols real vector.
template <typename T>
ComplexMatrix<T> cmul_rowvec(const ComplexMatrix<T>& a, const Tensor<T>& v) {
  return {mul_rowvec(a.re, v), mul_rowvec(a.im, v)};
}

template <typename T>
ComplexMatrix<T> cslice_rows(const ComplexMatrix<T>& a, std::size_t r0, std::size_t r1) {
  return {slice_rows(a.re, r0, r1), slice_rows(a.im, r0, r1)};
}

// Squared Frobenius norm as a 1x1 tensor.
template <typename T>
Tensor<T> cfrob2(const ComplexMatrix<T>& a) {
  return add(sum_all(square(a.re)), sum_all(square(a.im)));
}

}  // namespace fddprec
