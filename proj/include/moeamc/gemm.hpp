#pragma once

#include <cstddef>
#include <vector>

namespace moeamc::detail {

// C[M,N] += A[M,K] * B[K,N], all row-major contiguous. Four-row blocks keep
// the inner loop streaming over C and B rows, which vectorizes without
// reassociating any individual accumulation chain.
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    for (std::size_t p = 0; p < k; ++p) {
      T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        T bv = br[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    const T* ar = a + i * k;
    T* cr = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      T av = ar[p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[M,N] += A^T * B where A is stored [K,M].
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ar = a + p * m;
    const T* br = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      T av = ar[i];
      T* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// out[N,M] = in[M,N]^T
template <class T>
void transpose(const T* in, T* out, std::size_t m, std::size_t n) {
  constexpr std::size_t kBlk = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kBlk) {
    std::size_t i1 = std::min(i0 + kBlk, m);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlk) {
      std::size_t j1 = std::min(j0 + kBlk, n);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) out[j * m + i] = in[i * n + j];
      }
    }
  }
}

// C[M,N] += A[M,K] * B^T where B is stored [N,K].
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n);
}

}  // namespace moeamc::detail
