#pragma once

// Dense kernels shared by the tensor ops. Every output element is produced by
// the same sequence of floating-point operations regardless of how many rows
// are processed in one call, so a row computed alone is bit-identical to the
// same row computed inside a larger batch. Incremental decoding relies on it.

#include <cstddef>

namespace pivotmt::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

// c[k x n] (+)= a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

}  // namespace pivotmt::kernels
