#pragma once

#include <cstddef>

namespace distill::kernels {

// Hot arithmetic loops live behind this table. Every entry has a scalar
// reference implementation and, on x86-64 with AVX2+FMA, a vectorized
// variant selected once at startup. The two are equivalence-tested; the
// scalar path is the semantic reference.
struct KernelTable {
    // c (m x n) = a (m x k) * b (k x n), row-major, c overwritten.
    void (*matmul)(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
    // c (m x n) = a^T * b with a stored (k x m), b (k x n).
    void (*matmul_at)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // c (m x n) = a * b^T with a (m x k), b stored (n x k).
    void (*matmul_bt)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y = max(x, 0)
    void (*relu)(const double* x, double* y, std::size_t n);
    // out = upstream where pre > 0, else 0. Subgradient at 0 is 0.
    void (*relu_grad)(const double* pre, const double* upstream, double* out,
                      std::size_t n);
    // v = mu * v - lr * g;  p += v   (classical momentum step)
    void (*sgd_momentum)(double* param, double* vel, const double* grad,
                         double lr, double mu, std::size_t n);
};

enum class Backend { scalar, avx2 };

const char* backend_name(Backend b);

// Backend picked at startup: AVX2 when the CPU supports AVX2+FMA and the
// build carries the AVX2 unit, otherwise scalar. DISTILL_KERNELS=scalar
// in the environment forces the reference path.
Backend active_backend();

// Swap the active backend (tests use this to compare paths). Throws
// ArgumentError if the requested backend is not available. Not safe to
// call while other threads are inside kernels.
void set_backend(Backend b);

bool backend_available(Backend b);

const KernelTable& table();

namespace scalar {
extern const KernelTable kTable;
}
#if defined(DISTILL_HAVE_AVX2_UNIT)
namespace avx2 {
extern const KernelTable kTable;
}
#endif

}  // namespace distill::kernels
