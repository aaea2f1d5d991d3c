#pragma once

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "octforge/common.hpp"

namespace octforge {

// Small row-major GEMM kernels for the conv/linear hot paths. Each output
// element is accumulated by exactly one thread in a fixed k order, so results
// are bit-identical for any thread count.

namespace detail {
inline int gemm_threads(int64_t work, bool parallel) {
    if (!parallel) return 1;
    int t = max_threads();
    if (work < (1 << 16)) return 1; // not worth forking
    return t;
}
} // namespace detail

// C[M,N] += A[M,K] * B[K,N]. Output rows are processed in blocks of four so
// each B row is reused from L1; per-element accumulation order stays k-ascending.
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C, bool parallel = true) {
    constexpr int IB = 4;
    const int nblocks = (M + IB - 1) / IB;
    const int nt = detail::gemm_threads(int64_t(M) * N * K, parallel);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
    for (int blk = 0; blk < nblocks; ++blk) {
        const int i0 = blk * IB;
        const int ilim = std::min(i0 + IB, M);
        for (int k = 0; k < K; ++k) {
            const T* b = B + int64_t(k) * N;
            for (int i = i0; i < ilim; ++i) {
                const T av = A[int64_t(i) * K + k];
                T* c = C + int64_t(i) * N;
                for (int j = 0; j < N; ++j) c[j] += av * b[j];
            }
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C, bool parallel = true) {
    constexpr int IB = 4;
    const int nblocks = (M + IB - 1) / IB;
    const int nt = detail::gemm_threads(int64_t(M) * N * K, parallel);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
    for (int blk = 0; blk < nblocks; ++blk) {
        const int i0 = blk * IB;
        const int ilim = std::min(i0 + IB, M);
        for (int k = 0; k < K; ++k) {
            const T* b = B + int64_t(k) * N;
            for (int i = i0; i < ilim; ++i) {
                const T av = A[int64_t(k) * M + i];
                T* c = C + int64_t(i) * N;
                for (int j = 0; j < N; ++j) c[j] += av * b[j];
            }
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T. The dot product accumulates in 16 independent
// lanes folded by a fixed tree, which keeps the reduction vectorizable and
// the summation order deterministic.
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool parallel = true) {
    constexpr int L = 16;
    const int nt = detail::gemm_threads(int64_t(M) * N * K, parallel);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1)
#endif
    for (int i = 0; i < M; ++i) {
        const T* a = A + int64_t(i) * K;
        T* c = C + int64_t(i) * N;
        for (int j = 0; j < N; ++j) {
            const T* b = B + int64_t(j) * K;
            T lanes[L] = {};
            int k = 0;
            for (; k + L <= K; k += L)
                for (int l = 0; l < L; ++l) lanes[l] += a[k + l] * b[k + l];
            for (; k < K; ++k) lanes[k % L] += a[k] * b[k];
            for (int step = L / 2; step > 0; step /= 2)
                for (int l = 0; l < step; ++l) lanes[l] += lanes[l + step];
            c[j] += lanes[0];
        }
    }
}

} // namespace octforge
