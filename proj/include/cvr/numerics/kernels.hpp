#pragma once

#include <cstddef>
#include <vector>

// Dense kernels. Each output element is accumulated over the inner index in
// ascending order with no reassociation, so a row's result never depends on
// how many other rows share the call. Serving relies on that: batching must
// not change any score bit.
namespace cvr::kernels {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) noexcept {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = brow[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      const double v = ai[p];
      for (std::size_t j = 0; j < n; ++j) ci[j] += v * brow[j];
    }
  }
}

// out[n x m] = in[m x n]^T
inline void transpose(const double* in, double* out, std::size_t m, std::size_t n) noexcept {
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kTile)
    for (std::size_t j0 = 0; j0 < n; j0 += kTile)
      for (std::size_t i = i0; i < i0 + kTile && i < m; ++i)
        for (std::size_t j = j0; j < j0 + kTile && j < n; ++j) out[j * m + i] = in[i * n + j];
}

// C[m x n] += A[m x k] * B^T, B stored [n x k].
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  std::vector<double> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n);
}

// C[k x n] += A^T * B, A stored [m x k], B stored [m x n].
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) noexcept {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v = ai[p];
      if (v == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += v * bi[j];
    }
  }
}

}  // namespace cvr::kernels
