#pragma once

#include <cstddef>

// Compute kernels backing the op layer. The fast paths are OpenMP-parallel
// and, for float GEMM, use AVX2/FMA when the compiler targets it. Plain
// serial versions live in kernels::ref; tests check the fast paths against
// them and the benchmark binary compares their throughput.
//
// Every parallel loop writes disjoint output elements and keeps a fixed
// per-element reduction order, so results are bit-identical for any thread
// count.

namespace advst::kernels {

// C (m x n) = A (m x k) * B (k x n), with A/B optionally read transposed in
// place (lda/ldb are the row strides of the arrays as stored). beta selects
// overwrite (0) or accumulate (1); other values are a contract violation.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);

// Valid convolution, stride 1. Lowers one [c, h, w] image to a column matrix
// of shape [c*kh*kw, oh*ow] with oh = h-kh+1, ow = w-kw+1. col_stride is the
// row stride of the destination (>= oh*ow, so several images can share one
// matrix side by side); col points at this image's first column.
template <class T>
void im2col(const T* in, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, T* col, std::size_t col_stride);

// Adjoint of im2col: accumulates the column matrix back into d_in (caller
// zeroes d_in beforehand when that is wanted).
template <class T>
void col2im(const T* col, std::size_t col_stride, std::size_t c, std::size_t h,
            std::size_t w, std::size_t kh, std::size_t kw, T* d_in);

namespace ref {

// Naive serial GEMM, the correctness oracle for the packed path.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb,
          T beta, T* c, std::size_t ldc);

template <class T>
void im2col(const T* in, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, T* col, std::size_t col_stride);

template <class T>
void col2im(const T* col, std::size_t col_stride, std::size_t c, std::size_t h,
            std::size_t w, std::size_t kh, std::size_t kw, T* d_in);

}  // namespace ref

}  // namespace advst::kernels
