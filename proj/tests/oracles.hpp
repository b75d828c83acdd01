// Test-only reference implementations, written as direct transcriptions of
// the layer definitions with nested loops. They share no code with the
// library's evaluation paths (which go through im2col + gemm).
#pragma once

#include <cstddef>
#include <functional>

#include "lrlc/grad_check.hpp"
#include "lrlc/rng.hpp"
#include "lrlc/tensor.hpp"

namespace oracle {

using lrlc::Tensor;

/// Plain triple-loop matrix product.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

/// Direct per-position correlation: O[n,i,j,c] = sum_{x,y,z} patch * F + bias,
/// SAME zero padding, stride 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& filters, const Tensor<T>& bias) {
  const std::size_t N = input.extent(0), H = input.extent(1), W = input.extent(2),
                    Cin = input.extent(3);
  const std::size_t fh = filters.extent(0), fw = filters.extent(1), Cout = filters.extent(3);
  Tensor<T> out({N, H, W, Cout});
  const std::ptrdiff_t oy = fh / 2, ox = fw / 2;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t c = 0; c < Cout; ++c) {
          T s = bias.size() ? bias[c] : T{0};
          for (std::size_t x = 0; x < fh; ++x)
            for (std::size_t y = 0; y < fw; ++y) {
              const std::ptrdiff_t si = std::ptrdiff_t(i + x) - oy;
              const std::ptrdiff_t sj = std::ptrdiff_t(j + y) - ox;
              if (si < 0 || si >= std::ptrdiff_t(H) || sj < 0 || sj >= std::ptrdiff_t(W)) continue;
              for (std::size_t z = 0; z < Cin; ++z)
                s += input(n, std::size_t(si), std::size_t(sj), z) * filters(x, y, z, c);
            }
          out(n, i, j, c) = s;
        }
  return out;
}

/// Per-position filter bank application (filters [H,W,h,w,Cin,Cout]).
template <typename T>
Tensor<T> local(const Tensor<T>& input, const Tensor<T>& filters, const Tensor<T>& bias) {
  const std::size_t N = input.extent(0), H = input.extent(1), W = input.extent(2),
                    Cin = input.extent(3);
  const std::size_t fh = filters.extent(2), fw = filters.extent(3), Cout = filters.extent(5);
  Tensor<T> out({N, H, W, Cout});
  const std::ptrdiff_t oy = fh / 2, ox = fw / 2;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t c = 0; c < Cout; ++c) {
          T s = bias.size() ? bias[c] : T{0};
          for (std::size_t x = 0; x < fh; ++x)
            for (std::size_t y = 0; y < fw; ++y) {
              const std::ptrdiff_t si = std::ptrdiff_t(i + x) - oy;
              const std::ptrdiff_t sj = std::ptrdiff_t(j + y) - ox;
              if (si < 0 || si >= std::ptrdiff_t(H) || sj < 0 || sj >= std::ptrdiff_t(W)) continue;
              for (std::size_t z = 0; z < Cin; ++z)
                s += input(n, std::size_t(si), std::size_t(sj), z) * filters(i, j, x, y, z, c);
            }
          out(n, i, j, c) = s;
        }
  return out;
}

/// Hand-rolled bilinear interpolation (half-pixel-center convention).
template <typename T>
Tensor<T> bilinear(const Tensor<T>& x, std::size_t H, std::size_t W) {
  const std::size_t N = x.extent(0), Hi = x.extent(1), Wi = x.extent(2), C = x.extent(3);
  Tensor<T> y({N, H, W, C});
  auto tap = [](std::size_t in, std::size_t out, std::size_t d, std::size_t& lo, std::size_t& hi,
                double& f) {
    double src = (double(d) + 0.5) * double(in) / double(out) - 0.5;
    src = std::min(std::max(src, 0.0), double(in - 1));
    lo = std::size_t(src);
    hi = std::min(lo + 1, in - 1);
    f = hi == lo ? 0.0 : src - double(lo);
  };
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        std::size_t i0, i1, j0, j1;
        double fy, fx;
        tap(Hi, H, i, i0, i1, fy);
        tap(Wi, W, j, j0, j1, fx);
        for (std::size_t c = 0; c < C; ++c) {
          const double top = (1 - fx) * x(n, i0, j0, c) + fx * x(n, i0, j1, c);
          const double bot = (1 - fx) * x(n, i1, j0, c) + fx * x(n, i1, j1, c);
          y(n, i, j, c) = T((1 - fy) * top + fy * bot);
        }
      }
  return y;
}

template <typename T>
Tensor<T> random_tensor(lrlc::Shape shape, lrlc::Rng& rng, T lo = T{-1}, T hi = T{1}) {
  Tensor<T> t(std::move(shape));
  rng.fill_uniform(t, lo, hi);
  return t;
}

/// Wraps a tensor-valued op for grad_check: reduces the output against a
/// fixed random projection so the scalar is sensitive to every element.
/// `backward` receives that projection as dout and must return one gradient
/// per input.
inline lrlc::GradCheckReport check_tensor_op(
    std::string name,
    const std::function<lrlc::TensorD(const std::vector<lrlc::TensorD>&)>& forward,
    const std::function<std::vector<lrlc::TensorD>(const std::vector<lrlc::TensorD>&,
                                                   const lrlc::TensorD&)>& backward,
    std::vector<lrlc::TensorD> inputs, double tolerance = 1e-5,
    lrlc::GradCheckOptions extra = {}) {
  lrlc::Rng wr(0x51de);
  lrlc::TensorD probe = forward(inputs);
  lrlc::TensorD w = random_tensor<double>(probe.shape(), wr);
  auto scalar = [&](const std::vector<lrlc::TensorD>& in) {
    lrlc::TensorD y = forward(in);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  auto grads = [&](const std::vector<lrlc::TensorD>& in) { return backward(in, w); };
  lrlc::GradCheckOptions opts = extra;
  opts.tolerance = tolerance;
  return lrlc::grad_check(std::move(name), scalar, grads, std::move(inputs), opts);
}

}  // namespace oracle
