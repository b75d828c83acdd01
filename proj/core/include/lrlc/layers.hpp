#pragma once

#include <optional>
#include <vector>

#include "lrlc/exec.hpp"
#include "lrlc/gemm.hpp"
#include "lrlc/patches.hpp"
#include "lrlc/rng.hpp"
#include "lrlc/tensor.hpp"
#include "lrlc/tensor_ops.hpp"

namespace lrlc {

// All spatial operators use SAME zero padding and stride 1; activations are
// N x H x W x C and filter banks h x w x Cin x Cout.

template <typename T>
struct ConvLayer {
  Tensor<T> filters;  // [h, w, Cin, Cout], h and w odd
  Tensor<T> bias;     // [Cout]
};

template <typename T>
struct LocalLayer {
  Tensor<T> filters;  // [H, W, h, w, Cin, Cout], one bank per position
  Tensor<T> bias;     // [Cout]
};

/// Additive bias decomposed into row + column + channel terms.
template <typename T>
struct SpatialBias {
  Tensor<T> row;      // [H]
  Tensor<T> col;      // [W]
  Tensor<T> channel;  // [Cout]
};

namespace detail {

// Images per im2col chunk, bounded so the column buffer stays cache/RAM
// friendly at training batch sizes.
template <typename T>
std::size_t conv_chunk_images(std::size_t H, std::size_t W, std::size_t patch) {
  const std::size_t budget = 32u << 20;
  const std::size_t per_image = H * W * patch * sizeof(T);
  return std::max<std::size_t>(1, budget / std::max<std::size_t>(per_image, 1));
}

template <typename T>
void copy_patch(const Tensor<T>& x, std::size_t n, std::size_t i, std::size_t j, std::size_t fh,
                std::size_t fw, T* dst) {
  const std::size_t H = x.extent(1), W = x.extent(2), C = x.extent(3);
  const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(fh / 2);
  const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(fw / 2);
  const T* img = x.data() + n * H * W * C;
  for (std::size_t y = 0; y < fh; ++y) {
    const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + y) - oy;
    for (std::size_t xx = 0; xx < fw; ++xx) {
      const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + xx) - ox;
      T* cell = dst + (y * fw + xx) * C;
      if (si < 0 || si >= static_cast<std::ptrdiff_t>(H) || sj < 0 ||
          sj >= static_cast<std::ptrdiff_t>(W)) {
        for (std::size_t z = 0; z < C; ++z) cell[z] = T{0};
      } else {
        const T* src = img + (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * C;
        for (std::size_t z = 0; z < C; ++z) cell[z] = src[z];
      }
    }
  }
}

template <typename T>
void add_patch(Tensor<T>& x, std::size_t n, std::size_t i, std::size_t j, std::size_t fh,
               std::size_t fw, const T* src) {
  const std::size_t H = x.extent(1), W = x.extent(2), C = x.extent(3);
  const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(fh / 2);
  const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(fw / 2);
  T* img = x.data() + n * H * W * C;
  for (std::size_t y = 0; y < fh; ++y) {
    const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + y) - oy;
    if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
    for (std::size_t xx = 0; xx < fw; ++xx) {
      const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + xx) - ox;
      if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
      T* cell = img + (static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)) * C;
      const T* val = src + (y * fw + xx) * C;
      for (std::size_t z = 0; z < C; ++z) cell[z] += val[z];
    }
  }
}

template <typename T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& filters) {
  require<ShapeError>(x.rank() == 4, "conv2d input must be N x H x W x C, got ",
                      shape_str(x.shape()));
  require<ShapeError>(filters.rank() == 4, "conv2d filters must be h x w x Cin x Cout, got ",
                      shape_str(filters.shape()));
  require<ConfigError>(filters.extent(0) % 2 == 1 && filters.extent(1) % 2 == 1,
                       "conv2d filter extents must be odd, got ", filters.extent(0), "x",
                       filters.extent(1));
  require<ShapeError>(filters.extent(2) == x.extent(3), "conv2d channel mismatch: input has ",
                      x.extent(3), ", filters expect ", filters.extent(2));
}

}  // namespace detail

/// Correlation of the input with one shared filter bank (no bias term).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& filters) {
  detail::check_conv_shapes(x, filters);
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t fh = filters.extent(0), fw = filters.extent(1), Cin = filters.extent(2),
                    Cout = filters.extent(3);
  const std::size_t patch = fh * fw * Cin;
  Tensor<T> y({N, H, W, Cout});
  const std::size_t chunk = detail::conv_chunk_images<T>(H, W, patch);
  std::vector<T> col(std::min(chunk, N) * H * W * patch);
  for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
    const std::size_t n1 = std::min(N, n0 + chunk);
    exec::parallel_for(n1 - n0, [&](std::size_t a, std::size_t b) {
      detail::im2col(x, fh, fw, n0 + a, n0 + b, col.data() + a * H * W * patch);
    });
    gemm_nn<T>((n1 - n0) * H * W, Cout, patch, col.data(), patch, filters.data(), Cout,
               y.data() + n0 * H * W * Cout, Cout, false);
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const ConvLayer<T>& layer) {
  require<ShapeError>(layer.bias.size() == layer.filters.extent(3),
                      "conv2d bias extent mismatch");
  Tensor<T> y = conv2d(x, layer.filters);
  const std::size_t Cout = layer.bias.size();
  T* p = y.data();
  for (std::size_t i = 0; i < y.size(); i += Cout)
    for (std::size_t c = 0; c < Cout; ++c) p[i + c] += layer.bias[c];
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> filters;
  Tensor<T> bias;
  Tensor<T> input;  // empty when not requested
};

/// Gradients of conv2d_forward; recomputes im2col chunks rather than caching.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& filters, const Tensor<T>& dout,
                             bool need_dinput = true) {
  detail::check_conv_shapes(x, filters);
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t fh = filters.extent(0), fw = filters.extent(1), Cin = filters.extent(2),
                    Cout = filters.extent(3);
  require<ShapeError>(dout.rank() == 4 && dout.extent(0) == N && dout.extent(1) == H &&
                          dout.extent(2) == W && dout.extent(3) == Cout,
                      "conv2d_backward dout shape mismatch");
  const std::size_t patch = fh * fw * Cin;

  ConvGrads<T> g;
  g.filters = Tensor<T>(filters.shape());
  g.bias = Tensor<T>({Cout});
  if (need_dinput) g.input = Tensor<T>(x.shape());

  for (std::size_t i = 0; i < dout.size(); i += Cout)
    for (std::size_t c = 0; c < Cout; ++c) g.bias[c] += dout[i + c];

  const std::size_t chunk = detail::conv_chunk_images<T>(H, W, patch);
  std::vector<T> col(std::min(chunk, N) * H * W * patch);
  std::vector<T> dcol(need_dinput ? col.size() : 0);
  for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
    const std::size_t n1 = std::min(N, n0 + chunk);
    const std::size_t rows = (n1 - n0) * H * W;
    exec::parallel_for(n1 - n0, [&](std::size_t a, std::size_t b) {
      detail::im2col(x, fh, fw, n0 + a, n0 + b, col.data() + a * H * W * patch);
    });
    const T* dout_chunk = dout.data() + n0 * H * W * Cout;
    gemm_tn<T>(patch, Cout, rows, col.data(), patch, dout_chunk, Cout, g.filters.data(), Cout,
               n0 > 0);
    if (need_dinput) {
      gemm_nt<T>(rows, patch, Cout, dout_chunk, Cout, filters.data(), Cout, dcol.data(), patch,
                 false);
      exec::parallel_for(n1 - n0, [&](std::size_t a, std::size_t b) {
        detail::col2im_add(dcol.data() + a * H * W * patch, fh, fw, n0 + a, n0 + b, g.input);
      });
    }
  }
  return g;
}

/// Locally connected layer: an independent filter bank at every position.
template <typename T>
Tensor<T> local_forward(const Tensor<T>& x, const LocalLayer<T>& layer) {
  require<ShapeError>(x.rank() == 4, "local_forward input must be N x H x W x C");
  const Tensor<T>& f = layer.filters;
  require<ShapeError>(f.rank() == 6, "local filters must be H x W x h x w x Cin x Cout");
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), Cin = x.extent(3);
  require<ShapeError>(f.extent(0) == H && f.extent(1) == W,
                      "local layer is bound to extent ", f.extent(0), "x", f.extent(1),
                      " but input is ", H, "x", W);
  require<ShapeError>(f.extent(4) == Cin, "local layer channel mismatch");
  require<ConfigError>(f.extent(2) % 2 == 1 && f.extent(3) % 2 == 1,
                       "local filter extents must be odd");
  require<ShapeError>(layer.bias.size() == f.extent(5), "local bias extent mismatch");
  const std::size_t fh = f.extent(2), fw = f.extent(3), Cout = f.extent(5);
  const std::size_t patch = fh * fw * Cin;

  Tensor<T> y({N, H, W, Cout});
  exec::parallel_for(H * W, [&](std::size_t p0, std::size_t p1) {
    std::vector<T> a(N * patch), out(N * Cout);
    for (std::size_t pos = p0; pos < p1; ++pos) {
      const std::size_t i = pos / W, j = pos % W;
      for (std::size_t n = 0; n < N; ++n)
        detail::copy_patch(x, n, i, j, fh, fw, a.data() + n * patch);
      gemm_nn<T>(N, Cout, patch, a.data(), patch, f.data() + pos * patch * Cout, Cout, out.data(),
                 Cout, false);
      for (std::size_t n = 0; n < N; ++n) {
        T* dst = y.data() + ((n * H * W) + pos) * Cout;
        for (std::size_t c = 0; c < Cout; ++c) dst[c] = out[n * Cout + c] + layer.bias[c];
      }
    }
  });
  return y;
}

template <typename T>
struct LocalGrads {
  Tensor<T> filters;
  Tensor<T> bias;
  Tensor<T> input;
};

template <typename T>
LocalGrads<T> local_backward(const Tensor<T>& x, const LocalLayer<T>& layer, const Tensor<T>& dout,
                             bool need_dinput = true) {
  const Tensor<T>& f = layer.filters;
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), Cin = x.extent(3);
  const std::size_t fh = f.extent(2), fw = f.extent(3), Cout = f.extent(5);
  require<ShapeError>(dout.rank() == 4 && dout.extent(0) == N && dout.extent(1) == H &&
                          dout.extent(2) == W && dout.extent(3) == Cout,
                      "local_backward dout shape mismatch");
  const std::size_t patch = fh * fw * Cin;

  LocalGrads<T> g;
  g.filters = Tensor<T>(f.shape());
  g.bias = Tensor<T>({Cout});
  if (need_dinput) g.input = Tensor<T>(x.shape());

  for (std::size_t i = 0; i < dout.size(); i += Cout)
    for (std::size_t c = 0; c < Cout; ++c) g.bias[c] += dout[i + c];

  // dinput accumulation overlaps neighbouring positions, so that part stays
  // serial over positions; parallelism lives inside the per-position gemms.
  std::vector<T> a(N * patch), dy(N * Cout), da(N * patch);
  for (std::size_t pos = 0; pos < H * W; ++pos) {
    const std::size_t i = pos / W, j = pos % W;
    for (std::size_t n = 0; n < N; ++n) {
      detail::copy_patch(x, n, i, j, fh, fw, a.data() + n * patch);
      const T* src = dout.data() + ((n * H * W) + pos) * Cout;
      for (std::size_t c = 0; c < Cout; ++c) dy[n * Cout + c] = src[c];
    }
    gemm_tn<T>(patch, Cout, N, a.data(), patch, dy.data(), Cout,
               g.filters.data() + pos * patch * Cout, Cout, false);
    if (need_dinput) {
      gemm_nt<T>(N, patch, Cout, dy.data(), Cout, f.data() + pos * patch * Cout, Cout, da.data(),
                 patch, false);
      for (std::size_t n = 0; n < N; ++n)
        detail::add_patch(g.input, n, i, j, fh, fw, da.data() + n * patch);
    }
  }
  return g;
}

template <typename T>
Tensor<T> spatial_bias_add(const Tensor<T>& x, const SpatialBias<T>& bias) {
  require<ShapeError>(x.rank() == 4, "spatial_bias_add input must be N x H x W x C");
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
  require<ShapeError>(bias.row.size() == H && bias.col.size() == W && bias.channel.size() == C,
                      "spatial bias extents ", bias.row.size(), "/", bias.col.size(), "/",
                      bias.channel.size(), " do not match input ", shape_str(x.shape()));
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const T b = bias.row[i] + bias.col[j];
        const T* src = x.data() + ((n * H + i) * W + j) * C;
        T* dst = y.data() + ((n * H + i) * W + j) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] = src[c] + b + bias.channel[c];
      }
  return y;
}

template <typename T>
SpatialBias<T> spatial_bias_backward(const Tensor<T>& dout) {
  const std::size_t N = dout.extent(0), H = dout.extent(1), W = dout.extent(2), C = dout.extent(3);
  SpatialBias<T> g{Tensor<T>({H}), Tensor<T>({W}), Tensor<T>({C})};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const T* src = dout.data() + ((n * H + i) * W + j) * C;
        T s = 0;
        for (std::size_t c = 0; c < C; ++c) {
          s += src[c];
          g.channel[c] += src[c];
        }
        g.row[i] += s;
        g.col[j] += s;
      }
  return g;
}

/// Appends two channels holding row/column coordinates scaled to [-1, 1]
/// (midpoint 0 when the extent is 1).
template <typename T>
Tensor<T> coordconv_augment(const Tensor<T>& x) {
  require<ShapeError>(x.rank() == 4, "coordconv_augment input must be N x H x W x C");
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
  require<ConfigError>(H >= 1 && W >= 1, "coordconv_augment: empty spatial extents");
  Tensor<T> y({N, H, W, C + 2});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i) {
      const T ri = H == 1 ? T{0} : T(-1) + T(2) * T(i) / T(H - 1);
      for (std::size_t j = 0; j < W; ++j) {
        const T cj = W == 1 ? T{0} : T(-1) + T(2) * T(j) / T(W - 1);
        const T* src = x.data() + ((n * H + i) * W + j) * C;
        T* dst = y.data() + ((n * H + i) * W + j) * (C + 2);
        for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
        dst[C] = ri;
        dst[C + 1] = cj;
      }
    }
  return y;
}

/// Drops the gradient of the two appended coordinate channels.
template <typename T>
Tensor<T> coordconv_backward(const Tensor<T>& dout) {
  const std::size_t N = dout.extent(0), H = dout.extent(1), W = dout.extent(2);
  const std::size_t C = dout.extent(3) - 2;
  Tensor<T> dx({N, H, W, C});
  for (std::size_t p = 0; p < N * H * W; ++p) {
    const T* src = dout.data() + p * (C + 2);
    T* dst = dx.data() + p * C;
    for (std::size_t c = 0; c < C; ++c) dst[c] = src[c];
  }
  return dx;
}

enum class BnMode { kTrain, kInference };

template <typename T>
struct BatchNormState {
  Tensor<T> gamma, beta;              // [C]
  Tensor<T> running_mean, running_var;  // [C]
  T epsilon = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.9);
};

template <typename T>
BatchNormState<T> make_batchnorm(std::size_t channels) {
  BatchNormState<T> s;
  s.gamma = Tensor<T>::full({channels}, T{1});
  s.beta = Tensor<T>({channels});
  s.running_mean = Tensor<T>({channels});
  s.running_var = Tensor<T>::full({channels}, T{1});
  return s;
}

template <typename T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per channel
};

/// Per-channel normalization over N x H x W. Train mode uses batch statistics
/// (biased variance) and folds them into the running averages; inference mode
/// uses running statistics only.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormState<T>& state, BnMode mode,
                            BnCache<T>* cache = nullptr) {
  require<ShapeError>(x.rank() == 4, "batchnorm input must be N x H x W x C");
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
  require<ShapeError>(state.gamma.size() == C, "batchnorm channel mismatch");
  require<ConfigError>(mode == BnMode::kInference || N >= 2,
                       "batchnorm train mode requires batch size >= 2, got ", N);
  const std::size_t spatial = N * H * W;
  std::vector<T> mean(C, T{0}), var(C, T{0});
  if (mode == BnMode::kTrain) {
    for (std::size_t p = 0; p < spatial; ++p) {
      const T* src = x.data() + p * C;
      for (std::size_t c = 0; c < C; ++c) mean[c] += src[c];
    }
    for (std::size_t c = 0; c < C; ++c) mean[c] /= T(spatial);
    for (std::size_t p = 0; p < spatial; ++p) {
      const T* src = x.data() + p * C;
      for (std::size_t c = 0; c < C; ++c) {
        const T d = src[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < C; ++c) var[c] /= T(spatial);
    for (std::size_t c = 0; c < C; ++c) {
      state.running_mean[c] = state.momentum * state.running_mean[c] + (T{1} - state.momentum) * mean[c];
      state.running_var[c] = state.momentum * state.running_var[c] + (T{1} - state.momentum) * var[c];
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }
  std::vector<T> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = T{1} / std::sqrt(var[c] + state.epsilon);

  Tensor<T> y(x.shape());
  Tensor<T> xhat(cache ? x.shape() : Shape{});
  for (std::size_t p = 0; p < spatial; ++p) {
    const T* src = x.data() + p * C;
    T* dst = y.data() + p * C;
    for (std::size_t c = 0; c < C; ++c) {
      const T xh = (src[c] - mean[c]) * inv_std[c];
      if (cache) xhat[p * C + c] = xh;
      dst[c] = state.gamma[c] * xh + state.beta[c];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
struct BnGrads {
  Tensor<T> gamma, beta, input;
};

/// Train-mode backward with batch statistics treated as functions of the input.
template <typename T>
BnGrads<T> batchnorm_backward(const BatchNormState<T>& state, const BnCache<T>& cache,
                              const Tensor<T>& dout) {
  const std::size_t C = state.gamma.size();
  const std::size_t spatial = dout.size() / C;
  BnGrads<T> g{Tensor<T>({C}), Tensor<T>({C}), Tensor<T>(dout.shape())};
  std::vector<T> sum_dy(C, T{0}), sum_dy_xhat(C, T{0});
  for (std::size_t p = 0; p < spatial; ++p) {
    const T* dy = dout.data() + p * C;
    const T* xh = cache.xhat.data() + p * C;
    for (std::size_t c = 0; c < C; ++c) {
      sum_dy[c] += dy[c];
      sum_dy_xhat[c] += dy[c] * xh[c];
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    g.beta[c] = sum_dy[c];
    g.gamma[c] = sum_dy_xhat[c];
  }
  const T inv_m = T{1} / T(spatial);
  for (std::size_t p = 0; p < spatial; ++p) {
    const T* dy = dout.data() + p * C;
    const T* xh = cache.xhat.data() + p * C;
    T* dx = g.input.data() + p * C;
    for (std::size_t c = 0; c < C; ++c) {
      dx[c] = state.gamma[c] * cache.inv_std[c] *
              (dy[c] - inv_m * sum_dy[c] - xh[c] * inv_m * sum_dy_xhat[c]);
    }
  }
  return g;
}

/// N x H x W x C -> N x C spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require<ShapeError>(x.rank() == 4, "global_avg_pool input must be N x H x W x C");
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
  Tensor<T> y({N, C});
  for (std::size_t n = 0; n < N; ++n) {
    T* dst = y.data() + n * C;
    for (std::size_t p = 0; p < H * W; ++p) {
      const T* src = x.data() + (n * H * W + p) * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
    }
    for (std::size_t c = 0; c < C; ++c) dst[c] /= T(H * W);
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, std::size_t H, std::size_t W) {
  const std::size_t N = dy.extent(0), C = dy.extent(1);
  Tensor<T> dx({N, H, W, C});
  const T scale = T{1} / T(H * W);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < H * W; ++p) {
      T* dst = dx.data() + (n * H * W + p) * C;
      const T* src = dy.data() + n * C;
      for (std::size_t c = 0; c < C; ++c) dst[c] = src[c] * scale;
    }
  return dx;
}

template <typename T>
struct DenseLayer {
  Tensor<T> weights;  // [Cin, classes]
  Tensor<T> bias;     // [classes]
};

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const DenseLayer<T>& layer) {
  require<ShapeError>(x.rank() == 2 && x.extent(1) == layer.weights.extent(0),
                      "dense input/weight mismatch: ", shape_str(x.shape()), " vs ",
                      shape_str(layer.weights.shape()));
  Tensor<T> y = matmul(x, layer.weights);
  const std::size_t classes = layer.bias.size();
  for (std::size_t i = 0; i < y.size(); i += classes)
    for (std::size_t c = 0; c < classes; ++c) y[i + c] += layer.bias[c];
  return y;
}

template <typename T>
struct DenseGrads {
  Tensor<T> weights, bias, input;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const DenseLayer<T>& layer,
                             const Tensor<T>& dout) {
  const std::size_t N = x.extent(0), Cin = x.extent(1), classes = layer.bias.size();
  DenseGrads<T> g{Tensor<T>(layer.weights.shape()), Tensor<T>({classes}), Tensor<T>(x.shape())};
  gemm_tn<T>(Cin, classes, N, x.data(), Cin, dout.data(), classes, g.weights.data(), classes,
             false);
  for (std::size_t i = 0; i < dout.size(); i += classes)
    for (std::size_t c = 0; c < classes; ++c) g.bias[c] += dout[i + c];
  gemm_nt<T>(N, Cin, classes, dout.data(), classes, layer.weights.data(), classes, g.input.data(),
             Cin, false);
  return g;
}

/// Fan-in scaled uniform initialization (He-style bound sqrt(6 / fan_in)).
template <typename T>
void init_fan_in_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  rng.fill_uniform(t, static_cast<T>(-bound), static_cast<T>(bound));
}

template <typename T>
ConvLayer<T> make_conv(std::size_t fh, std::size_t fw, std::size_t cin, std::size_t cout,
                       Rng& rng) {
  ConvLayer<T> layer{Tensor<T>({fh, fw, cin, cout}), Tensor<T>({cout})};
  init_fan_in_uniform(layer.filters, fh * fw * cin, rng);
  return layer;
}

template <typename T>
LocalLayer<T> make_local(std::size_t H, std::size_t W, std::size_t fh, std::size_t fw,
                         std::size_t cin, std::size_t cout, Rng& rng) {
  LocalLayer<T> layer{Tensor<T>({H, W, fh, fw, cin, cout}), Tensor<T>({cout})};
  init_fan_in_uniform(layer.filters, fh * fw * cin, rng);
  return layer;
}

template <typename T>
DenseLayer<T> make_dense(std::size_t cin, std::size_t classes, Rng& rng) {
  DenseLayer<T> layer{Tensor<T>({cin, classes}), Tensor<T>({classes})};
  init_fan_in_uniform(layer.weights, cin, rng);
  return layer;
}

}  // namespace lrlc
