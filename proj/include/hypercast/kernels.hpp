#pragma once

// Dense float64 arithmetic kernels used by the autodiff engine.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant. The variant is picked once at startup from CPUID; the
// HYPERCAST_ISA environment variable ("scalar" or "avx2") overrides it.
// All matrices are row-major and dense.

#include <cstddef>
#include <string_view>

namespace hypercast::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    // sum_i x[i] * y[i]
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // out[i] = x[i] + y[i]
    void (*add)(const double* x, const double* y, double* out, std::size_t n);
    // out[i] = x[i] * y[i]
    void (*mul)(const double* x, const double* y, double* out, std::size_t n);
    // C[m,n] += A[m,k] * B[k,n]
    void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
    // C[m,n] += A[m,k] * B[n,k]^T
    void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
    // C[k,n] += A[m,k]^T * B[m,n]
    void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without the variant.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);

// Table selected for this process.
const KernelTable& active();

std::string_view isa_name(Isa isa);

}  // namespace hypercast::kernels
