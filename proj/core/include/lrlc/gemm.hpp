#pragma once

#include <cstddef>

namespace lrlc {

/// Dense row-major matrix products. C is always M x N and K is the
/// contraction extent. Accumulation order over K is fixed per output element,
/// and threading splits only output rows, so results are bitwise reproducible
/// for a given thread count.
///
/// gemm_nn: C (+)= A[M x K] * B[K x N]
/// gemm_nt: C (+)= A[M x K] * B[N x K]^T
/// gemm_tn: C (+)= A[K x M]^T * B[K x N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

}  // namespace lrlc
