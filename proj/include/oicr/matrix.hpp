#pragma once

#include <cstddef>
#include <vector>

#include "oicr/check.hpp"

namespace oicr {

// Minimal dense row-major matrix of doubles. All model arithmetic runs in
// 64-bit; 32-bit floats only appear at serialization boundaries.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// C = A * B
inline Mat matmul(const Mat& A, const Mat& B) {
  OICR_CHECK(A.cols == B.rows, "matmul shape");
  Mat C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = &A.a[static_cast<size_t>(i) * A.cols];
    double* crow = &C.a[static_cast<size_t>(i) * C.cols];
    for (int k = 0; k < A.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &B.a[static_cast<size_t>(k) * B.cols];
      for (int j = 0; j < B.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return C;
}

// C = A^T * B
inline Mat matmul_tn(const Mat& A, const Mat& B) {
  OICR_CHECK(A.rows == B.rows, "matmul_tn shape");
  Mat C(A.cols, B.cols);
  for (int k = 0; k < A.rows; ++k) {
    const double* arow = &A.a[static_cast<size_t>(k) * A.cols];
    const double* brow = &B.a[static_cast<size_t>(k) * B.cols];
    for (int i = 0; i < A.cols; ++i) {
      double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = &C.a[static_cast<size_t>(i) * C.cols];
      for (int j = 0; j < B.cols; ++j) crow[j] += aki * brow[j];
    }
  }
  return C;
}

// C = A * B^T
inline Mat matmul_nt(const Mat& A, const Mat& B) {
  OICR_CHECK(A.cols == B.cols, "matmul_nt shape");
  Mat C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = &A.a[static_cast<size_t>(i) * A.cols];
    double* crow = &C.a[static_cast<size_t>(i) * C.cols];
    for (int j = 0; j < B.rows; ++j) {
      const double* brow = &B.a[static_cast<size_t>(j) * B.cols];
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
      crow[j] += s;
    }
  }
  return C;
}

inline Mat hadamard(const Mat& A, const Mat& B) {
  OICR_CHECK(A.same_shape(B), "hadamard shape");
  Mat C(A.rows, A.cols);
  for (size_t i = 0; i < A.a.size(); ++i) C.a[i] = A.a[i] * B.a[i];
  return C;
}

inline void add_inplace(Mat& A, const Mat& B) {
  OICR_CHECK(A.same_shape(B), "add shape");
  for (size_t i = 0; i < A.a.size(); ++i) A.a[i] += B.a[i];
}

}  // namespace oicr
