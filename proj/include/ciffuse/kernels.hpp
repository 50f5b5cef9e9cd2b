// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
//
// Dense row-major GEMM kernels. Each kernel exists twice: a serial reference
// and an OpenMP row-parallel version. Both accumulate every output element
// in the same order, so their results are bit-identical.
#pragma once

#include <cstddef>

namespace ciffuse::kernels {

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
void gemm_nn_parallel(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n);

// C[m×n] += A[m×k] · B[n×k]ᵀ
void gemm_nt_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
void gemm_nt_parallel(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n);

// C[k×n] += A[m×k]ᵀ · B[m×n]
void gemm_tn_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n);
void gemm_tn_parallel(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n);

// Dispatchers used by the autodiff core. The parallel path is taken only when
// OpenMP has more than one thread available and the product is large enough.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n);

// Work threshold (m·k·n) above which the dispatchers go parallel.
void set_parallel_threshold(std::size_t flops);
std::size_t parallel_threshold();

// Number of threads OpenMP would use (1 when built without OpenMP).
int max_threads();

}  // namespace ciffuse::kernels
