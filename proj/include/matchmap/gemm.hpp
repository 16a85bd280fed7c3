// Copyright 2026 The Matchmap Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>

#include "matchmap/common.hpp"

// Hand-rolled GEMM kernels with a pinned accumulation order.
//
// gemm_nn and gemm_tn accumulate every output element strictly in
// ascending k, and column j of the result depends on column j of B
// alone, independent of N. Evaluating a sample inside a wider batch is
// therefore bitwise identical to evaluating it alone. A tuned BLAS does
// not give that guarantee: its blocking changes with matrix sizes.
//
// The register tiling below (MR x NR accumulator tiles) only decides
// which elements are computed together, never the per-element summation
// order. The vector lanes of one accumulator hold distinct output
// columns, so lane parallelism cannot reorder any sum either.

namespace mm {

namespace detail {

#if defined(__GNUC__) && (defined(__x86_64__) || defined(__aarch64__))
#define MM_GEMM_VEC 1
template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type
      __attribute__((vector_size(64), aligned(4), may_alias));
};
template <>
struct VecOf<double> {
  typedef double type
      __attribute__((vector_size(64), aligned(8), may_alias));
};
#else
#define MM_GEMM_VEC 0
#endif

template <typename T>
struct GemmTile {
  static constexpr int64_t MR = 8;
  static constexpr int64_t NR = sizeof(T) == 4 ? 16 : 8;
};

// Full MR x NR tile, k strictly ascending. TA selects how A is
// addressed: false reads A[mi, k] with row stride lda, true reads
// A[k, mi] with row stride lda.
template <typename T, int64_t MR, int64_t NR, bool TA>
inline void tile_full(int64_t K, const T* A, int64_t lda, const T* B,
                      int64_t ldb, T* C, int64_t ldc, bool accumulate) {
#if MM_GEMM_VEC
  using Vec = typename VecOf<T>::type;
  static_assert(sizeof(Vec) == NR * sizeof(T));
  Vec acc[MR] = {};
  for (int64_t k = 0; k < K; ++k) {
    const Vec bv = *reinterpret_cast<const Vec*>(B + k * ldb);
    for (int64_t mi = 0; mi < MR; ++mi) {
      const T a = TA ? A[k * lda + mi] : A[mi * lda + k];
      acc[mi] += a * bv;
    }
  }
  for (int64_t mi = 0; mi < MR; ++mi) {
    Vec* crow = reinterpret_cast<Vec*>(C + mi * ldc);
    if (accumulate)
      *crow += acc[mi];
    else
      *crow = acc[mi];
  }
#else
  T acc[MR][NR];
  for (int64_t mi = 0; mi < MR; ++mi)
    for (int64_t ji = 0; ji < NR; ++ji) acc[mi][ji] = T(0);
  for (int64_t k = 0; k < K; ++k) {
    const T* brow = B + k * ldb;
    for (int64_t mi = 0; mi < MR; ++mi) {
      const T a = TA ? A[k * lda + mi] : A[mi * lda + k];
      for (int64_t ji = 0; ji < NR; ++ji) acc[mi][ji] += a * brow[ji];
    }
  }
  for (int64_t mi = 0; mi < MR; ++mi) {
    T* crow = C + mi * ldc;
    if (accumulate)
      for (int64_t ji = 0; ji < NR; ++ji) crow[ji] += acc[mi][ji];
    else
      for (int64_t ji = 0; ji < NR; ++ji) crow[ji] = acc[mi][ji];
  }
#endif
}

// Partial tile of mr x nr elements at a matrix edge; same k order.
template <typename T, bool TA>
inline void tile_part(int64_t mr, int64_t nr, int64_t K, const T* A,
                      int64_t lda, const T* B, int64_t ldb, T* C, int64_t ldc,
                      bool accumulate) {
  constexpr int64_t MR = GemmTile<T>::MR;
  constexpr int64_t NR = GemmTile<T>::NR;
  T acc[MR][NR];
  for (int64_t mi = 0; mi < mr; ++mi)
    for (int64_t ji = 0; ji < nr; ++ji) acc[mi][ji] = T(0);
  for (int64_t k = 0; k < K; ++k) {
    const T* brow = B + k * ldb;
    for (int64_t mi = 0; mi < mr; ++mi) {
      const T a = TA ? A[k * lda + mi] : A[mi * lda + k];
      for (int64_t ji = 0; ji < nr; ++ji) acc[mi][ji] += a * brow[ji];
    }
  }
  for (int64_t mi = 0; mi < mr; ++mi) {
    T* crow = C + mi * ldc;
    if (accumulate)
      for (int64_t ji = 0; ji < nr; ++ji) crow[ji] += acc[mi][ji];
    else
      for (int64_t ji = 0; ji < nr; ++ji) crow[ji] = acc[mi][ji];
  }
}

template <typename T, bool TA>
void gemm_tiled(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda,
                const T* B, int64_t ldb, T* C, int64_t ldc, bool accumulate) {
  constexpr int64_t MR = GemmTile<T>::MR;
  constexpr int64_t NR = GemmTile<T>::NR;
  for (int64_t j0 = 0; j0 < N; j0 += NR) {
    const int64_t nr = std::min(NR, N - j0);
    for (int64_t i0 = 0; i0 < M; i0 += MR) {
      const int64_t mr = std::min(MR, M - i0);
      const T* a = TA ? A + i0 : A + i0 * lda;
      const T* b = B + j0;
      T* c = C + i0 * ldc + j0;
      if (mr == MR && nr == NR)
        tile_full<T, MR, NR, TA>(K, a, lda, b, ldb, c, ldc, accumulate);
      else
        tile_part<T, TA>(mr, nr, K, a, lda, b, ldb, c, ldc, accumulate);
    }
  }
}

}  // namespace detail

// C[M,N] = A[M,K] * B[K,N]  (or += when accumulate).
// lda/ldb/ldc are row strides of dense row-major storage.
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda,
             const T* B, int64_t ldb, T* C, int64_t ldc,
             bool accumulate = false) {
  detail::gemm_tiled<T, false>(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

// C[M,N] = A[K,M]^T * B[K,N]. Same tile structure; A is addressed with a
// column stride instead.
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda,
             const T* B, int64_t ldb, T* C, int64_t ldc,
             bool accumulate = false) {
  detail::gemm_tiled<T, true>(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

// C[M,N] = A[M,K] * B[N,K]^T (rows dotted with rows). Used only in
// backward passes, so it needs determinism for fixed shapes but not
// column independence: each dot accumulates over vector lanes fixed by
// K, then reduces the lanes serially.
template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda,
             const T* B, int64_t ldb, T* C, int64_t ldc,
             bool accumulate = false) {
  constexpr int64_t VL = sizeof(T) == 4 ? 16 : 8;
  constexpr int64_t IB = 2, JB = 4;
  for (int64_t i0 = 0; i0 < M; i0 += IB) {
    const int64_t ib = std::min(IB, M - i0);
    for (int64_t j0 = 0; j0 < N; j0 += JB) {
      const int64_t jb = std::min(JB, N - j0);
      T lanes[IB][JB][VL];
      for (int64_t ii = 0; ii < ib; ++ii)
        for (int64_t jj = 0; jj < jb; ++jj)
          for (int64_t l = 0; l < VL; ++l) lanes[ii][jj][l] = T(0);
      const int64_t kv = K - K % VL;
      for (int64_t k = 0; k < kv; k += VL) {
        for (int64_t ii = 0; ii < ib; ++ii) {
          const T* arow = A + (i0 + ii) * lda + k;
          for (int64_t jj = 0; jj < jb; ++jj) {
            const T* brow = B + (j0 + jj) * ldb + k;
            T* acc = lanes[ii][jj];
            for (int64_t l = 0; l < VL; ++l) acc[l] += arow[l] * brow[l];
          }
        }
      }
      for (int64_t ii = 0; ii < ib; ++ii) {
        for (int64_t jj = 0; jj < jb; ++jj) {
          T s = T(0);
          for (int64_t l = 0; l < VL; ++l) s += lanes[ii][jj][l];
          const T* arow = A + (i0 + ii) * lda;
          const T* brow = B + (j0 + jj) * ldb;
          for (int64_t k = kv; k < K; ++k) s += arow[k] * brow[k];
          T* cp = C + (i0 + ii) * ldc + (j0 + jj);
          if (accumulate)
            *cp += s;
          else
            *cp = s;
        }
      }
    }
  }
}

}  // namespace mm
