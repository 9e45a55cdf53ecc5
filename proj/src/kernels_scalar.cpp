#include <cstring>

#include "distill/kernels.hpp"

// Reference kernels. Plain loops, no intrinsics; the vector backends are
// tested for equivalence against these.

namespace distill::kernels::scalar {

namespace {

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_at(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    // a is stored (k x m): c[p, :] += a[r, p] * b[r, :]
    std::memset(c, 0, m * n * sizeof(double));
    for (std::size_t r = 0; r < k; ++r) {
        const double* arow = a + r * m;
        const double* brow = b + r * n;
        for (std::size_t p = 0; p < m; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_bt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    // b is stored (n x k): c[i, j] = dot(a[i, :], b[j, :])
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void relu(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad(const double* pre, const double* upstream, double* out,
               std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = pre[i] > 0.0 ? upstream[i] : 0.0;
}

void sgd_momentum(double* param, double* vel, const double* grad, double lr,
                  double mu, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        vel[i] = mu * vel[i] - lr * grad[i];
        param[i] += vel[i];
    }
}

}  // namespace

const KernelTable kTable = {
    matmul, matmul_at, matmul_bt, axpy, dot, relu, relu_grad, sgd_momentum,
};

}  // namespace distill::kernels::scalar
