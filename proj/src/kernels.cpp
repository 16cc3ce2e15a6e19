#include "kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace pivotmt::kernels {

namespace {

constexpr std::size_t kRows = 4;
constexpr std::size_t kLanes = 8;
constexpr std::size_t kCols = 2 * kLanes;

typedef double Vec __attribute__((vector_size(kLanes * sizeof(double))));

inline Vec load(const double* p) {
  Vec v;
  std::memcpy(&v, p, sizeof(Vec));
  return v;
}

inline void store(double* p, Vec v) { std::memcpy(p, &v, sizeof(Vec)); }

// c[R x kCols] block at column j0; accumulators stay in registers over p.
template <std::size_t R>
inline void block(const double* a, const double* b, double* c, std::size_t k, std::size_t n, std::size_t j0) {
  Vec lo[R], hi[R];
  for (std::size_t r = 0; r < R; ++r) {
    lo[r] = load(c + r * n + j0);
    hi[r] = load(c + r * n + j0 + kLanes);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const Vec b0 = load(b + p * n + j0);
    const Vec b1 = load(b + p * n + j0 + kLanes);
    for (std::size_t r = 0; r < R; ++r) {
      const double s = a[r * k + p];
      lo[r] += s * b0;
      hi[r] += s * b1;
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    store(c + r * n + j0, lo[r]);
    store(c + r * n + j0 + kLanes, hi[r]);
  }
}

template <std::size_t R>
inline void rows(const double* a, const double* b, double* c, std::size_t k, std::size_t n) {
  std::size_t j0 = 0;
  for (; j0 + kCols <= n; j0 += kCols) block<R>(a, b, c, k, n, j0);
  if (j0 == n) return;
  for (std::size_t r = 0; r < R; ++r) {
    double* __restrict crow = c + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[r * k + p];
      const double* __restrict brow = b + p * n;
      for (std::size_t j = j0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  std::size_t i = 0;
  for (; i + kRows <= m; i += kRows) rows<kRows>(a + i * k, b, c + i * n, k, n);
  for (; i < m; ++i) rows<1>(a + i * k, b, c + i * n, k, n);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  std::vector<double> bt(k * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + r] = b[r * k + p];
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  std::vector<double> at(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  gemm_nn(at.data(), b, c, k, m, n, accumulate);
}

}  // namespace pivotmt::kernels
