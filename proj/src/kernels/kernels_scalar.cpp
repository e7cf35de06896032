#include "hypercast/kernels.hpp"

namespace hypercast::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void add_scalar(const double* x, const double* y, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_scalar(const double* x, const double* y, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_scalar(av, b + p * n, crow, n);
        }
    }
}

void gemm_nt_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot_scalar(a + i * k, b + j * k, k);
}

void gemm_tn_scalar(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            axpy_scalar(av, brow, c + p * n, n);
        }
    }
}

const KernelTable kScalar{Isa::scalar,  dot_scalar,     axpy_scalar,    add_scalar,
                          mul_scalar,   gemm_nn_scalar, gemm_nt_scalar, gemm_tn_scalar};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace hypercast::kernels
