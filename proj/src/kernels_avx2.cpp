#include "distill/kernels.hpp"

// AVX2+FMA kernels, 4-wide doubles. This translation unit is the only one
// compiled with -mavx2 -mfma; it is reached solely through the dispatch
// table after a CPUID check.

#if defined(DISTILL_HAVE_AVX2_UNIT)

#include <immintrin.h>

#include <cstring>

namespace distill::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

// row_y += alpha * row_x
inline void fma_row(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256d y0 = _mm256_loadu_pd(y + i);
        __m256d y1 = _mm256_loadu_pd(y + i + 4);
        y0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), y0);
        y1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), y1);
        _mm256_storeu_pd(y + i, y0);
        _mm256_storeu_pd(y + i + 4, y1);
    }
    for (; i + 4 <= n; i += 4) {
        __m256d y0 = _mm256_loadu_pd(y + i);
        y0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), y0);
        _mm256_storeu_pd(y + i, y0);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p)
            fma_row(arow[p], b + p * n, crow, n);
    }
}

void matmul_at(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t r = 0; r < k; ++r) {
        const double* arow = a + r * m;
        const double* brow = b + r * n;
        for (std::size_t p = 0; p < m; ++p)
            fma_row(arow[p], brow, c + p * n, n);
    }
}

inline double dot_impl(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                               acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                               _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                               acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void matmul_bt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j)
            crow[j] = dot_impl(arow, b + j * k, k);
    }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    fma_row(alpha, x, y, n);
}

double dot(const double* x, const double* y, std::size_t n) {
    return dot_impl(x, y, n);
}

void relu(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(const double* pre, const double* upstream, double* out,
               std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero,
                                           _CMP_GT_OQ);
        _mm256_storeu_pd(out + i,
                         _mm256_and_pd(mask, _mm256_loadu_pd(upstream + i)));
    }
    for (; i < n; ++i) out[i] = pre[i] > 0.0 ? upstream[i] : 0.0;
}

void sgd_momentum(double* param, double* vel, const double* grad, double lr,
                  double mu, std::size_t n) {
    const __m256d vmu = _mm256_set1_pd(mu);
    const __m256d vlr = _mm256_set1_pd(-lr);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_mul_pd(vmu, _mm256_loadu_pd(vel + i));
        v = _mm256_fmadd_pd(vlr, _mm256_loadu_pd(grad + i), v);
        _mm256_storeu_pd(vel + i, v);
        _mm256_storeu_pd(param + i,
                         _mm256_add_pd(_mm256_loadu_pd(param + i), v));
    }
    for (; i < n; ++i) {
        vel[i] = mu * vel[i] - lr * grad[i];
        param[i] += vel[i];
    }
}

}  // namespace

const KernelTable kTable = {
    matmul, matmul_at, matmul_bt, axpy, dot, relu, relu_grad, sgd_momentum,
};

}  // namespace distill::kernels::avx2

#endif  // DISTILL_HAVE_AVX2_UNIT
