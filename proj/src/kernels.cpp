#include "advst/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "advst/errors.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define ADVST_HAVE_AVX2 1
#endif

namespace advst::kernels {

namespace {

// BLIS-style blocking. The A panel (MC x KC floats) stays in L2, one B strip
// (KC x NR) in L1. MC is a multiple of MR, NC a multiple of NR.
constexpr std::size_t MR = 6;
constexpr std::size_t NR = 16;
constexpr std::size_t MC = 120;
constexpr std::size_t KC = 256;
constexpr std::size_t NC = 3072;

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Pack an mc x kc panel of A into MR-row strips, zero-padding short strips.
// Strip s holds kc groups of MR consecutive floats (one per row).
void pack_a(bool trans, const float* a, std::size_t lda, std::size_t i0, std::size_t p0,
            std::size_t mc, std::size_t kc, float* dst) {
    const std::size_t strips = ceil_div(mc, MR);
#pragma omp parallel for schedule(static)
    for (long long s = 0; s < static_cast<long long>(strips); ++s) {
        float* d = dst + static_cast<std::size_t>(s) * MR * kc;
        const std::size_t ibase = i0 + static_cast<std::size_t>(s) * MR;
        const std::size_t rows = std::min(MR, i0 + mc - ibase);
        for (std::size_t p = 0; p < kc; ++p) {
            const std::size_t pp = p0 + p;
            for (std::size_t r = 0; r < MR; ++r) {
                d[p * MR + r] =
                    r < rows ? (trans ? a[pp * lda + (ibase + r)] : a[(ibase + r) * lda + pp])
                             : 0.0f;
            }
        }
    }
}

// Pack a kc x nc panel of B into NR-column strips, zero-padding short strips.
void pack_b(bool trans, const float* b, std::size_t ldb, std::size_t p0, std::size_t j0,
            std::size_t kc, std::size_t nc, float* dst) {
    const std::size_t strips = ceil_div(nc, NR);
#pragma omp parallel for schedule(static)
    for (long long s = 0; s < static_cast<long long>(strips); ++s) {
        float* d = dst + static_cast<std::size_t>(s) * NR * kc;
        const std::size_t jbase = j0 + static_cast<std::size_t>(s) * NR;
        const std::size_t cols = std::min(NR, j0 + nc - jbase);
        for (std::size_t p = 0; p < kc; ++p) {
            const std::size_t pp = p0 + p;
            for (std::size_t jj = 0; jj < NR; ++jj) {
                d[p * NR + jj] =
                    jj < cols ? (trans ? b[(jbase + jj) * ldb + pp] : b[pp * ldb + (jbase + jj)])
                              : 0.0f;
            }
        }
    }
}

// 6x16 microkernel: C tile (+)= Ap strip * Bp strip over kc terms.
void micro_6x16(std::size_t kc, const float* ap, const float* bp, float* c, std::size_t ldc,
                bool accumulate) {
#ifdef ADVST_HAVE_AVX2
    __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
    __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
    __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
    __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
    __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
    __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
    for (std::size_t p = 0; p < kc; ++p) {
        const __m256 b0 = _mm256_loadu_ps(bp + p * NR);
        const __m256 b1 = _mm256_loadu_ps(bp + p * NR + 8);
        __m256 a;
        a = _mm256_set1_ps(ap[p * MR + 0]);
        c00 = _mm256_fmadd_ps(a, b0, c00);
        c01 = _mm256_fmadd_ps(a, b1, c01);
        a = _mm256_set1_ps(ap[p * MR + 1]);
        c10 = _mm256_fmadd_ps(a, b0, c10);
        c11 = _mm256_fmadd_ps(a, b1, c11);
        a = _mm256_set1_ps(ap[p * MR + 2]);
        c20 = _mm256_fmadd_ps(a, b0, c20);
        c21 = _mm256_fmadd_ps(a, b1, c21);
        a = _mm256_set1_ps(ap[p * MR + 3]);
        c30 = _mm256_fmadd_ps(a, b0, c30);
        c31 = _mm256_fmadd_ps(a, b1, c31);
        a = _mm256_set1_ps(ap[p * MR + 4]);
        c40 = _mm256_fmadd_ps(a, b0, c40);
        c41 = _mm256_fmadd_ps(a, b1, c41);
        a = _mm256_set1_ps(ap[p * MR + 5]);
        c50 = _mm256_fmadd_ps(a, b0, c50);
        c51 = _mm256_fmadd_ps(a, b1, c51);
    }
    const __m256 acc[6][2] = {{c00, c01}, {c10, c11}, {c20, c21},
                              {c30, c31}, {c40, c41}, {c50, c51}};
    for (std::size_t r = 0; r < MR; ++r) {
        float* crow = c + r * ldc;
        if (accumulate) {
            _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), acc[r][0]));
            _mm256_storeu_ps(crow + 8, _mm256_add_ps(_mm256_loadu_ps(crow + 8), acc[r][1]));
        } else {
            _mm256_storeu_ps(crow, acc[r][0]);
            _mm256_storeu_ps(crow + 8, acc[r][1]);
        }
    }
#else
    float acc[MR][NR] = {};
    for (std::size_t p = 0; p < kc; ++p) {
        for (std::size_t r = 0; r < MR; ++r) {
            const float av = ap[p * MR + r];
            for (std::size_t j = 0; j < NR; ++j) acc[r][j] += av * bp[p * NR + j];
        }
    }
    for (std::size_t r = 0; r < MR; ++r) {
        for (std::size_t j = 0; j < NR; ++j) {
            float* dst = c + r * ldc + j;
            *dst = (accumulate ? *dst : 0.0f) + acc[r][j];
        }
    }
#endif
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc) {
    if (beta != 0.0f && beta != 1.0f)
        throw ContractError("gemm: beta must be 0 or 1");
    if (m == 0 || n == 0) return;
    if (k == 0) {
        if (beta == 0.0f)
            for (std::size_t i = 0; i < m; ++i) std::memset(c + i * ldc, 0, n * sizeof(float));
        return;
    }

    // Packing buffers live in the calling thread and are read by the worker
    // threads; they grow once and stick around.
    thread_local std::vector<float> apack, bpack;
    apack.resize(ceil_div(MC, MR) * MR * KC);
    bpack.resize(ceil_div(NC, NR) * NR * KC);

    for (std::size_t jc = 0; jc < n; jc += NC) {
        const std::size_t nc = std::min(NC, n - jc);
        const std::size_t jstrips = ceil_div(nc, NR);
        for (std::size_t pc = 0; pc < k; pc += KC) {
            const std::size_t kc = std::min(KC, k - pc);
            const bool accumulate = pc > 0 || beta == 1.0f;
            pack_b(trans_b, b, ldb, pc, jc, kc, nc, bpack.data());
            for (std::size_t ic = 0; ic < m; ic += MC) {
                const std::size_t mc = std::min(MC, m - ic);
                const std::size_t istrips = ceil_div(mc, MR);
                pack_a(trans_a, a, lda, ic, pc, mc, kc, apack.data());
#pragma omp parallel for schedule(static)
                for (long long js = 0; js < static_cast<long long>(jstrips); ++js) {
                    const std::size_t j = jc + static_cast<std::size_t>(js) * NR;
                    const std::size_t jw = std::min(NR, jc + nc - j);
                    const float* bs = bpack.data() + static_cast<std::size_t>(js) * NR * kc;
                    for (std::size_t is = 0; is < istrips; ++is) {
                        const std::size_t i = ic + is * MR;
                        const std::size_t iw = std::min(MR, ic + mc - i);
                        const float* as = apack.data() + is * MR * kc;
                        if (iw == MR && jw == NR) {
                            micro_6x16(kc, as, bs, c + i * ldc + j, ldc, accumulate);
                        } else {
                            float scratch[MR * NR];
                            micro_6x16(kc, as, bs, scratch, NR, false);
                            for (std::size_t r = 0; r < iw; ++r) {
                                float* crow = c + (i + r) * ldc + j;
                                if (accumulate)
                                    for (std::size_t jj = 0; jj < jw; ++jj)
                                        crow[jj] += scratch[r * NR + jj];
                                else
                                    for (std::size_t jj = 0; jj < jw; ++jj)
                                        crow[jj] = scratch[r * NR + jj];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Double GEMM backs the float64 side of the op layer (gradient checks and
// oracle tests on small tensors), so a plain row-parallel loop is enough.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
    if (beta != 0.0 && beta != 1.0)
        throw ContractError("gemm: beta must be 0 or 1");
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const std::size_t ii = static_cast<std::size_t>(i);
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = trans_a ? a[p * lda + ii] : a[ii * lda + p];
                const double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            c[ii * ldc + j] = (beta == 1.0 ? c[ii * ldc + j] : 0.0) + acc;
        }
    }
}

template <class T>
void im2col(const T* in, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, T* col, std::size_t col_stride) {
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    const std::size_t rows = c * kh * kw;
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < static_cast<long long>(rows); ++r) {
        const std::size_t rr = static_cast<std::size_t>(r);
        const std::size_t kj = rr % kw;
        const std::size_t ki = (rr / kw) % kh;
        const std::size_t ch = rr / (kw * kh);
        const T* src = in + ch * h * w;
        T* dst = col + rr * col_stride;
        for (std::size_t oi = 0; oi < oh; ++oi) {
            const T* s = src + (oi + ki) * w + kj;
            for (std::size_t oj = 0; oj < ow; ++oj) dst[oi * ow + oj] = s[oj];
        }
    }
}

template <class T>
void col2im(const T* col, std::size_t col_stride, std::size_t c, std::size_t h,
            std::size_t w, std::size_t kh, std::size_t kw, T* d_in) {
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    // Rows of col touching different channels never overlap in d_in, so the
    // channel loop is the parallel one.
#pragma omp parallel for schedule(static)
    for (long long ch = 0; ch < static_cast<long long>(c); ++ch) {
        T* dst = d_in + static_cast<std::size_t>(ch) * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const std::size_t r = (static_cast<std::size_t>(ch) * kh + ki) * kw + kj;
                const T* src = col + r * col_stride;
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    T* d = dst + (oi + ki) * w + kj;
                    for (std::size_t oj = 0; oj < ow; ++oj) d[oj] += src[oi * ow + oj];
                }
            }
        }
    }
}

template void im2col<float>(const float*, std::size_t, std::size_t, std::size_t,
                            std::size_t, std::size_t, float*, std::size_t);
template void im2col<double>(const double*, std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, double*, std::size_t);
template void col2im<float>(const float*, std::size_t, std::size_t, std::size_t,
                            std::size_t, std::size_t, std::size_t, float*);
template void col2im<double>(const double*, std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t, double*);

namespace ref {

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, std::size_t lda, const T* b, std::size_t ldb,
          T beta, T* c, std::size_t ldc) {
    if (beta != T(0) && beta != T(1))
        throw ContractError("gemm: beta must be 0 or 1");
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
                const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            c[i * ldc + j] = (beta == T(1) ? c[i * ldc + j] : T(0)) + acc;
        }
    }
}

template <class T>
void im2col(const T* in, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, T* col, std::size_t col_stride) {
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const std::size_t r = (ch * kh + ki) * kw + kj;
                for (std::size_t oi = 0; oi < oh; ++oi)
                    for (std::size_t oj = 0; oj < ow; ++oj)
                        col[r * col_stride + oi * ow + oj] =
                            in[ch * h * w + (oi + ki) * w + (oj + kj)];
            }
}

template <class T>
void col2im(const T* col, std::size_t col_stride, std::size_t c, std::size_t h,
            std::size_t w, std::size_t kh, std::size_t kw, T* d_in) {
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const std::size_t r = (ch * kh + ki) * kw + kj;
                for (std::size_t oi = 0; oi < oh; ++oi)
                    for (std::size_t oj = 0; oj < ow; ++oj)
                        d_in[ch * h * w + (oi + ki) * w + (oj + kj)] +=
                            col[r * col_stride + oi * ow + oj];
            }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t,
                          const float*, std::size_t, const float*, std::size_t,
                          float, float*, std::size_t);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t,
                           const double*, std::size_t, const double*, std::size_t,
                           double, double*, std::size_t);
template void im2col<float>(const float*, std::size_t, std::size_t, std::size_t,
                            std::size_t, std::size_t, float*, std::size_t);
template void im2col<double>(const double*, std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, double*, std::size_t);
template void col2im<float>(const float*, std::size_t, std::size_t, std::size_t,
                            std::size_t, std::size_t, std::size_t, float*);
template void col2im<double>(const double*, std::size_t, std::size_t, std::size_t,
                             std::size_t, std::size_t, std::size_t, double*);

}  // namespace ref

}  // namespace advst::kernels
