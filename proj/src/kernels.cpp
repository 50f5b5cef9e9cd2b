// Copyright 2026 The ciffuse Authors. Apache 2.0 License.
#include "ciffuse/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ciffuse::kernels {

namespace {
std::atomic<std::size_t> g_threshold{1u << 18};

using Index = long long;  // OpenMP loop variables must be signed
}  // namespace

void gemm_nn_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nn_parallel(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < static_cast<Index>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

void gemm_nt_parallel(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (Index ii = 0; ii < static_cast<Index>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

void gemm_tn_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_tn_parallel(const double* a, const double* b, double* c, std::size_t m,
                      std::size_t k, std::size_t n) {
  // Rows of C are independent; per element the sum still runs over i ascending.
#pragma omp parallel for schedule(static)
  for (Index pp = 0; pp < static_cast<Index>(k); ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    double* crow = c + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aip = a[i * k + p];
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_parallel_threshold(std::size_t flops) { g_threshold.store(flops); }
std::size_t parallel_threshold() { return g_threshold.load(); }

namespace {
bool go_parallel(std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
  return m * k * n >= g_threshold.load() && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
  (void)m, (void)k, (void)n;
  return false;
#endif
}
}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  if (go_parallel(m, k, n))
    gemm_nn_parallel(a, b, c, m, k, n);
  else
    gemm_nn_serial(a, b, c, m, k, n);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  if (go_parallel(m, k, n))
    gemm_nt_parallel(a, b, c, m, k, n);
  else
    gemm_nt_serial(a, b, c, m, k, n);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  if (go_parallel(m, k, n))
    gemm_tn_parallel(a, b, c, m, k, n);
  else
    gemm_tn_serial(a, b, c, m, k, n);
}

}  // namespace ciffuse::kernels
