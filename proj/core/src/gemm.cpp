#include "lrlc/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "lrlc/exec.hpp"

namespace lrlc {
namespace {

// Register tile: MR rows of C, NR columns held in vector registers.
// NR is sized to two cache lines of T so gcc/clang map the accumulator
// array onto FMA vectors.
template <typename T>
constexpr std::size_t kNR = 32 / sizeof(T) * 4;  // 32 floats / 16 doubles
constexpr std::size_t kMR = 4;

template <typename T, std::size_t MR, std::size_t NR>
void kernel_fixed(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
                  T* c, std::size_t ldc, bool accumulate) {
  T acc[MR][NR];
  for (std::size_t i = 0; i < MR; ++i)
    for (std::size_t j = 0; j < NR; ++j) acc[i][j] = T{0};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    for (std::size_t i = 0; i < MR; ++i) {
      const T aip = a[i * lda + p];
      for (std::size_t j = 0; j < NR; ++j) acc[i][j] += aip * brow[j];
    }
  }
  for (std::size_t i = 0; i < MR; ++i) {
    T* crow = c + i * ldc;
    if (accumulate)
      for (std::size_t j = 0; j < NR; ++j) crow[j] += acc[i][j];
    else
      for (std::size_t j = 0; j < NR; ++j) crow[j] = acc[i][j];
  }
}

// Edge tile of arbitrary size mr x nr (mr <= kMR, nr <= kNR).
template <typename T>
void kernel_edge(std::size_t mr, std::size_t nr, std::size_t k, const T* a, std::size_t lda,
                 const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  T acc[kMR][kNR<T>];
  for (std::size_t i = 0; i < mr; ++i)
    for (std::size_t j = 0; j < nr; ++j) acc[i][j] = T{0};
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    for (std::size_t i = 0; i < mr; ++i) {
      const T aip = a[i * lda + p];
      for (std::size_t j = 0; j < nr; ++j) acc[i][j] += aip * brow[j];
    }
  }
  for (std::size_t i = 0; i < mr; ++i) {
    T* crow = c + i * ldc;
    if (accumulate)
      for (std::size_t j = 0; j < nr; ++j) crow[j] += acc[i][j];
    else
      for (std::size_t j = 0; j < nr; ++j) crow[j] = acc[i][j];
  }
}

template <typename T>
void gemm_nn_rows(std::size_t m0, std::size_t m1, std::size_t n, std::size_t k, const T* a,
                  std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
                  bool accumulate) {
  constexpr std::size_t NR = kNR<T>;
  std::size_t i = m0;
  for (; i + kMR <= m1; i += kMR) {
    std::size_t j = 0;
    for (; j + NR <= n; j += NR)
      kernel_fixed<T, kMR, NR>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (j < n)
      kernel_edge<T>(kMR, n - j, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
  }
  if (i < m1) {
    for (std::size_t j = 0; j < n; j += kNR<T>) {
      const std::size_t nr = std::min(kNR<T>, n - j);
      kernel_edge<T>(m1 - i, nr, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    return;
  }
  // Split output rows across workers in MR-aligned blocks; disjoint writes.
  const std::size_t row_blocks = (m + kMR - 1) / kMR;
  const double flops = 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k);
  if (exec::threads() <= 1 || flops < 4e6) {
    gemm_nn_rows(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
    return;
  }
  exec::parallel_for(row_blocks, [&](std::size_t b0, std::size_t b1) {
    gemm_nn_rows(b0 * kMR, std::min(m, b1 * kMR), n, k, a, lda, b, ldb, c, ldc, accumulate);
  });
}

namespace {

// Cache-tiled out-of-place transpose: src is rows x cols with leading
// dimension lds; dst becomes cols x rows with leading dimension rows.
template <typename T>
void transpose_block(const T* src, std::size_t lds, std::size_t rows, std::size_t cols, T* dst,
                     std::size_t ldd) {
  constexpr std::size_t kTile = 64;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * ldd + r] = src[r * lds + c];
    }
  }
}

}  // namespace

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    return;
  }
  // Route through the nn kernel with B transposed once; B is a filter-sized
  // operand in every call site, so the scratch stays small.
  std::vector<T> bt(k * n);
  transpose_block(b, ldb, n, k, bt.data(), n);
  gemm_nn<T>(m, n, k, a, lda, bt.data(), n, c, ldc, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  // Tiled-transpose K-chunks of A, then reuse the nn kernel. Chunks run in
  // increasing K order, so per-element accumulation order is fixed.
  constexpr std::size_t kChunk = 512;
  std::vector<T> at(m * std::min(k, kChunk));
  bool first = !accumulate;
  for (std::size_t p0 = 0; p0 < k; p0 += kChunk) {
    const std::size_t pc = std::min(kChunk, k - p0);
    transpose_block(a + p0 * lda, lda, pc, m, at.data(), pc);
    gemm_nn<T>(m, n, pc, at.data(), pc, b + p0 * ldb, ldb, c, ldc, !first);
    first = false;
  }
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                             const float*, std::size_t, float*, std::size_t, bool);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                              const double*, std::size_t, double*, std::size_t, bool);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                             const float*, std::size_t, float*, std::size_t, bool);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                              const double*, std::size_t, double*, std::size_t, bool);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                             const float*, std::size_t, float*, std::size_t, bool);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                              const double*, std::size_t, double*, std::size_t, bool);

}  // namespace lrlc
