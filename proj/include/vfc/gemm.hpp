// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>

#include "vfc/common.hpp"

namespace vfc {

// Register-tiled GEMM building block for the conv/linear layers.
//
// Accumulation order along k is sequential for every output element and the
// parallel split is over output rows only, so results are bit-identical for
// any thread count (no -ffast-math anywhere; the compiler may not
// reassociate FP adds).

namespace detail {

template <class T>
inline constexpr int gemm_nr() {
  return 64 / static_cast<int>(sizeof(T)); // one cacheline of lanes
}

// C[M,N] (+)= A[M,K] * B[K,N], single row-range [m0,m1), row-major, no
// aliasing. Acc=false overwrites C, so the destination may be uninitialized.
template <class T, int MR, bool Acc>
inline void gemm_tile_rows(const T* __restrict a, const T* __restrict b,
                           T* __restrict c, int64_t m0, int64_t K, int64_t N) {
  constexpr int NR = gemm_nr<T>();
  const T* arow[MR];
  for (int r = 0; r < MR; ++r) arow[r] = a + (m0 + r) * K;

  int64_t n = 0;
  for (; n + NR <= N; n += NR) {
    T acc[MR][NR];
    if constexpr (Acc) {
      for (int r = 0; r < MR; ++r)
        for (int j = 0; j < NR; ++j) acc[r][j] = c[(m0 + r) * N + n + j];
    } else {
      for (int r = 0; r < MR; ++r)
        for (int j = 0; j < NR; ++j) acc[r][j] = T(0);
    }
    for (int64_t k = 0; k < K; ++k) {
      const T* __restrict brow = b + k * N + n;
      for (int r = 0; r < MR; ++r) {
        const T av = arow[r][k];
        for (int j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
      }
    }
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < NR; ++j) c[(m0 + r) * N + n + j] = acc[r][j];
  }
  if (n < N) {
    const int rem = static_cast<int>(N - n);
    for (int r = 0; r < MR; ++r) {
      T* __restrict crow = c + (m0 + r) * N + n;
      if constexpr (!Acc)
        for (int j = 0; j < rem; ++j) crow[j] = T(0);
      for (int64_t k = 0; k < K; ++k) {
        const T av = arow[r][k];
        const T* __restrict brow = b + k * N + n;
        for (int j = 0; j < rem; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <class T, bool Acc>
inline void gemm_rows(const T* a, const T* b, T* c, int64_t mbegin, int64_t mend,
                      int64_t K, int64_t N) {
  int64_t m = mbegin;
  for (; m + 8 <= mend; m += 8) gemm_tile_rows<T, 8, Acc>(a, b, c, m, K, N);
  for (; m + 4 <= mend; m += 4) gemm_tile_rows<T, 4, Acc>(a, b, c, m, K, N);
  for (; m < mend; ++m) gemm_tile_rows<T, 1, Acc>(a, b, c, m, K, N);
}

template <class T, bool Acc>
inline void gemm_impl(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
  if (M <= 0 || N <= 0) return;
  if (K <= 0) {
    if constexpr (!Acc) std::fill(c, c + M * N, T(0));
    return;
  }
  const int64_t flops = 2 * M * K * N;
  if (thread_count() > 1 && flops > (1 << 18) && M >= 16) {
    const int64_t tiles = (M + 7) / 8;
    parallel_for(tiles, [&](int64_t t0, int64_t t1) {
      gemm_rows<T, Acc>(a, b, c, t0 * 8, std::min(M, t1 * 8), K, N);
    });
  } else {
    gemm_rows<T, Acc>(a, b, c, 0, M, K, N);
  }
}

} // namespace detail

// C[M,N] += A[M,K] * B[K,N]; all row-major and contiguous.
template <class T>
inline void gemm_acc(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
  detail::gemm_impl<T, true>(a, b, c, M, K, N);
}

// C[M,N] = A[M,K] * B[K,N]; C may be uninitialized.
template <class T>
inline void gemm_set(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
  detail::gemm_impl<T, false>(a, b, c, M, K, N);
}

namespace detail {

// C[M,N] += sum_k A[k*lda + m] * B[k*ldb + n] : A is accessed transposed with
// an arbitrary row stride, so weight gradients accumulate straight out of
// activation/gradient tensors without materializing transposes.
template <class T, int MR>
inline void gemm_tn_tile(const T* __restrict a, int64_t lda, const T* __restrict b,
                         int64_t ldb, T* __restrict c, int64_t ldc, int64_t m0,
                         int64_t K, int64_t N) {
  constexpr int NR = gemm_nr<T>();
  int64_t n = 0;
  for (; n + NR <= N; n += NR) {
    T acc[MR][NR];
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < NR; ++j) acc[r][j] = T(0);
    for (int64_t k = 0; k < K; ++k) {
      const T* __restrict arow = a + k * lda + m0;
      const T* __restrict brow = b + k * ldb + n;
      for (int r = 0; r < MR; ++r) {
        const T av = arow[r];
        for (int j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
      }
    }
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < NR; ++j) c[(m0 + r) * ldc + n + j] += acc[r][j];
  }
  if (n < N) {
    const int rem = static_cast<int>(N - n);
    T acc[MR][NR];
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < rem; ++j) acc[r][j] = T(0);
    for (int64_t k = 0; k < K; ++k) {
      const T* __restrict arow = a + k * lda + m0;
      const T* __restrict brow = b + k * ldb + n;
      for (int r = 0; r < MR; ++r) {
        const T av = arow[r];
        for (int j = 0; j < rem; ++j) acc[r][j] += av * brow[j];
      }
    }
    for (int r = 0; r < MR; ++r)
      for (int j = 0; j < rem; ++j) c[(m0 + r) * ldc + n + j] += acc[r][j];
  }
}

template <class T>
inline void gemm_tn_rows(const T* a, int64_t lda, const T* b, int64_t ldb, T* c,
                         int64_t ldc, int64_t mbegin, int64_t mend, int64_t K,
                         int64_t N) {
  int64_t m = mbegin;
  for (; m + 8 <= mend; m += 8) gemm_tn_tile<T, 8>(a, lda, b, ldb, c, ldc, m, K, N);
  for (; m + 4 <= mend; m += 4) gemm_tn_tile<T, 4>(a, lda, b, ldb, c, ldc, m, K, N);
  for (; m < mend; ++m) gemm_tn_tile<T, 1>(a, lda, b, ldb, c, ldc, m, K, N);
}

} // namespace detail

// C[M,N] += A^T B where A is [K x M] with row stride lda and B is [K x N]
// with row stride ldb; C has row stride ldc.
template <class T>
inline void gemm_tn_acc(const T* a, int64_t lda, const T* b, int64_t ldb, T* c,
                        int64_t ldc, int64_t M, int64_t K, int64_t N) {
  if (M <= 0 || N <= 0 || K <= 0) return;
  const int64_t flops = 2 * M * K * N;
  if (thread_count() > 1 && flops > (1 << 20) && M >= 16) {
    const int64_t tiles = (M + 7) / 8;
    parallel_for(tiles, [&](int64_t t0, int64_t t1) {
      detail::gemm_tn_rows(a, lda, b, ldb, c, ldc, t0 * 8, std::min(M, t1 * 8), K, N);
    });
  } else {
    detail::gemm_tn_rows(a, lda, b, ldb, c, ldc, 0, M, K, N);
  }
}

// uninitialized scratch space shared into backward closures
template <class T>
inline std::shared_ptr<T[]> make_scratch(int64_t n) {
  return std::shared_ptr<T[]>(new T[static_cast<size_t>(n)]);
}

// dst[C,R] = src[R,C] transposed; blocked for cache friendliness.
template <class T>
inline void transpose(const T* src, T* dst, int64_t R, int64_t C) {
  constexpr int64_t BLK = 32;
  const int64_t rblocks = (R + BLK - 1) / BLK;
  parallel_for(rblocks, [&](int64_t rb0, int64_t rb1) {
    for (int64_t rb = rb0; rb < rb1; ++rb) {
      const int64_t r0 = rb * BLK, r1 = std::min(R, r0 + BLK);
      for (int64_t c0 = 0; c0 < C; c0 += BLK) {
        const int64_t c1 = std::min(C, c0 + BLK);
        for (int64_t r = r0; r < r1; ++r)
          for (int64_t c = c0; c < c1; ++c) dst[c * R + r] = src[r * C + c];
      }
    }
  });
}

} // namespace vfc
