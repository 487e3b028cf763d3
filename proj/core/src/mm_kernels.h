#pragma once

#include <cstdint>

// Accumulating GEMM micro-kernels shared by the matmul and linear paths.
namespace gapnet::detail {

// c[M,N] += a[M,K] * b[K,N]
template <typename T>
void mm_acc(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * K;
    T* crow = c + static_cast<int64_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T av = arow[k];
      const T* brow = b + static_cast<int64_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[M,K] += a[M,N] * b[K,N]^T
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, int M, int N, int K) {
  for (int i = 0; i < M; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * N;
    T* crow = c + static_cast<int64_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const T* brow = b + static_cast<int64_t>(k) * N;
      T acc = T(0);
      for (int j = 0; j < N; ++j) acc += arow[j] * brow[j];
      crow[k] += acc;
    }
  }
}

// c[K,N] += a[M,K]^T * b[M,N]
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * K;
    const T* brow = b + static_cast<int64_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T av = arow[k];
      T* crow = c + static_cast<int64_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace gapnet::detail
