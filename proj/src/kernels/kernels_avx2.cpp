#include "hypercast/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define HYPERCAST_HAVE_AVX2 1
#pragma GCC push_options
#pragma GCC target("avx2,fma")
#include <immintrin.h>
#endif

namespace hypercast::kernels {

#if HYPERCAST_HAVE_AVX2
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

inline double dot_inline(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

inline void axpy_inline(double a, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
        _mm256_storeu_pd(y + i + 4,
                         _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

double dot_avx2(const double* x, const double* y, std::size_t n) { return dot_inline(x, y, n); }

void axpy_avx2(double a, const double* x, double* y, std::size_t n) { axpy_inline(a, x, y, n); }

void add_avx2(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_avx2(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

// Four output rows share each load of a B row.
void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* c0 = c + (i + 0) * n;
        double* c1 = c + (i + 1) * n;
        double* c2 = c + (i + 2) * n;
        double* c3 = c + (i + 3) * n;
        const double* a0 = a + (i + 0) * k;
        const double* a1 = a + (i + 1) * k;
        const double* a2 = a + (i + 2) * k;
        const double* a3 = a + (i + 3) * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            const __m256d v0 = _mm256_set1_pd(a0[p]);
            const __m256d v1 = _mm256_set1_pd(a1[p]);
            const __m256d v2 = _mm256_set1_pd(a2[p]);
            const __m256d v3 = _mm256_set1_pd(a3[p]);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                const __m256d bv = _mm256_loadu_pd(brow + j);
                _mm256_storeu_pd(c0 + j, _mm256_fmadd_pd(v0, bv, _mm256_loadu_pd(c0 + j)));
                _mm256_storeu_pd(c1 + j, _mm256_fmadd_pd(v1, bv, _mm256_loadu_pd(c1 + j)));
                _mm256_storeu_pd(c2 + j, _mm256_fmadd_pd(v2, bv, _mm256_loadu_pd(c2 + j)));
                _mm256_storeu_pd(c3 + j, _mm256_fmadd_pd(v3, bv, _mm256_loadu_pd(c3 + j)));
            }
            for (; j < n; ++j) {
                c0[j] += a0[p] * brow[j];
                c1[j] += a1[p] * brow[j];
                c2[j] += a2[p] * brow[j];
                c3[j] += a3[p] * brow[j];
            }
        }
    }
    for (; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_inline(av, b + p * n, crow, n);
        }
    }
}

void gemm_nt_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_inline(a + i * k, b + j * k, k);
}

void gemm_tn_avx2(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_inline(av, brow, c + p * n, n);
        }
    }
}

const KernelTable kAvx2{Isa::avx2, dot_avx2,     axpy_avx2,    add_avx2,
                        mul_avx2,  gemm_nn_avx2, gemm_nt_avx2, gemm_tn_avx2};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace hypercast::kernels

#if HYPERCAST_HAVE_AVX2
#pragma GCC pop_options
#endif
