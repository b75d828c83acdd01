#pragma once

#include <algorithm>
#include <cmath>

#include "lrlc/exec.hpp"
#include "lrlc/gemm.hpp"
#include "lrlc/tensor.hpp"

namespace lrlc {

/// Matrix product of 2-D tensors [m x k] * [k x n] -> [m x n].
/// In test mode uses a serial triple loop with a fixed summation order;
/// otherwise the blocked kernel. Both are deterministic across calls.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require<ShapeError>(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D tensors, got ",
                      shape_str(a.shape()), " and ", shape_str(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1);
  require<ShapeError>(b.extent(0) == k, "matmul inner extents disagree: ", shape_str(a.shape()),
                      " * ", shape_str(b.shape()));
  const std::size_t n = b.extent(1);
  Tensor<T> c({m, n});
  if (exec::test_mode()) {
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = pa[i * k + p];
        for (std::size_t j = 0; j < n; ++j) pc[i * n + j] += aip * pb[p * n + j];
      }
  } else {
    gemm_nn<T>(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
  }
  return c;
}

/// Elementwise max(0, x).
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

/// dL/dx for relu given the forward input.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  require<ShapeError>(x.same_shape(dy), "relu_backward shape mismatch");
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
  return dx;
}

/// Softmax over the last axis, guarded by max subtraction.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& logits) {
  require<ShapeError>(logits.rank() >= 1, "softmax_lastdim on rank-0 tensor");
  const std::size_t k = logits.extent(logits.rank() - 1);
  require<ShapeError>(k >= 1, "softmax_lastdim: empty last axis");
  Tensor<T> out(logits.shape());
  const std::size_t groups = logits.size() / k;
  const T* in = logits.data();
  T* o = out.data();
  for (std::size_t g = 0; g < groups; ++g) {
    const T* row = in + g * k;
    T m = row[0];
    for (std::size_t i = 1; i < k; ++i) m = std::max(m, row[i]);
    T denom = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const T e = std::exp(row[i] - m);
      o[g * k + i] = e;
      denom += e;
    }
    for (std::size_t i = 0; i < k; ++i) o[g * k + i] /= denom;
  }
  return out;
}

/// dL/dlogits for softmax over the last axis: w * (dw - sum_k w*dw).
template <typename T>
Tensor<T> softmax_lastdim_backward(const Tensor<T>& weights, const Tensor<T>& dweights) {
  require<ShapeError>(weights.same_shape(dweights), "softmax backward shape mismatch");
  const std::size_t k = weights.extent(weights.rank() - 1);
  Tensor<T> dlogits(weights.shape());
  const std::size_t groups = weights.size() / k;
  for (std::size_t g = 0; g < groups; ++g) {
    const T* w = weights.data() + g * k;
    const T* dw = dweights.data() + g * k;
    T dot = 0;
    for (std::size_t i = 0; i < k; ++i) dot += w[i] * dw[i];
    T* out = dlogits.data() + g * k;
    for (std::size_t i = 0; i < k; ++i) out[i] = w[i] * (dw[i] - dot);
  }
  return dlogits;
}

}  // namespace lrlc
