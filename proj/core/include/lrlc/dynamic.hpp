#pragma once

#include <vector>

#include "lrlc/cost.hpp"
#include "lrlc/lrlc.hpp"

namespace lrlc {

/// Downsampling average pool: window x window, stride = window, ceil mode,
/// partial edge windows averaged over the valid element count.
template <typename T>
Tensor<T> avg_pool_down(const Tensor<T>& x, std::size_t window) {
  require<ConfigError>(window >= 1, "avg_pool_down: window must be >= 1");
  if (window == 1) return x;
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
  const std::size_t Ho = (H + window - 1) / window, Wo = (W + window - 1) / window;
  Tensor<T> y({N, Ho, Wo, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oi = 0; oi < Ho; ++oi)
      for (std::size_t oj = 0; oj < Wo; ++oj) {
        const std::size_t i0 = oi * window, i1 = std::min(H, i0 + window);
        const std::size_t j0 = oj * window, j1 = std::min(W, j0 + window);
        T* dst = y.data() + ((n * Ho + oi) * Wo + oj) * C;
        for (std::size_t i = i0; i < i1; ++i)
          for (std::size_t j = j0; j < j1; ++j) {
            const T* src = x.data() + ((n * H + i) * W + j) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
          }
        const T inv = T{1} / T((i1 - i0) * (j1 - j0));
        for (std::size_t c = 0; c < C; ++c) dst[c] *= inv;
      }
  return y;
}

template <typename T>
Tensor<T> avg_pool_down_backward(const Tensor<T>& dy, std::size_t window, std::size_t H,
                                 std::size_t W) {
  if (window == 1) return dy;
  const std::size_t N = dy.extent(0), Ho = dy.extent(1), Wo = dy.extent(2), C = dy.extent(3);
  Tensor<T> dx({N, H, W, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oi = 0; oi < Ho; ++oi)
      for (std::size_t oj = 0; oj < Wo; ++oj) {
        const std::size_t i0 = oi * window, i1 = std::min(H, i0 + window);
        const std::size_t j0 = oj * window, j1 = std::min(W, j0 + window);
        const T inv = T{1} / T((i1 - i0) * (j1 - j0));
        const T* src = dy.data() + ((n * Ho + oi) * Wo + oj) * C;
        for (std::size_t i = i0; i < i1; ++i)
          for (std::size_t j = j0; j < j1; ++j) {
            T* dst = dx.data() + ((n * H + i) * W + j) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c] * inv;
          }
      }
  return dx;
}

namespace detail {

struct ResizeTap {
  std::size_t lo, hi;
  double frac;  // weight of hi; 0 when lo == hi
};

inline std::vector<ResizeTap> resize_taps(std::size_t in, std::size_t out) {
  std::vector<ResizeTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    const double max_src = static_cast<double>(in - 1);
    if (src > max_src) src = max_src;
    std::size_t lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    std::size_t hi = std::min(lo + 1, in - 1);
    double frac = src - static_cast<double>(lo);
    if (hi == lo) frac = 0.0;
    taps[d] = {lo, hi, frac};
  }
  return taps;
}

}  // namespace detail

/// Bilinear interpolation to target H x W (align-corners-false convention).
/// Identity-size resizes are bit-exact copies.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t H, std::size_t W) {
  require<ShapeError>(x.rank() == 4, "bilinear_resize input must be N x H x W x C");
  require<ConfigError>(H >= 1 && W >= 1, "bilinear_resize: zero target extent");
  const std::size_t N = x.extent(0), Hi = x.extent(1), Wi = x.extent(2), C = x.extent(3);
  require<ConfigError>(Hi >= 1 && Wi >= 1, "bilinear_resize: empty source");
  if (Hi == H && Wi == W) return x;
  const auto ty = detail::resize_taps(Hi, H);
  const auto tx = detail::resize_taps(Wi, W);
  Tensor<T> y({N, H, W, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const auto& [ilo, ihi, fy] = ty[i];
        const auto& [jlo, jhi, fx] = tx[j];
        const T* p00 = x.data() + ((n * Hi + ilo) * Wi + jlo) * C;
        const T* p01 = x.data() + ((n * Hi + ilo) * Wi + jhi) * C;
        const T* p10 = x.data() + ((n * Hi + ihi) * Wi + jlo) * C;
        const T* p11 = x.data() + ((n * Hi + ihi) * Wi + jhi) * C;
        const T w00 = static_cast<T>((1 - fy) * (1 - fx));
        const T w01 = static_cast<T>((1 - fy) * fx);
        const T w10 = static_cast<T>(fy * (1 - fx));
        const T w11 = static_cast<T>(fy * fx);
        T* dst = y.data() + ((n * H + i) * W + j) * C;
        for (std::size_t c = 0; c < C; ++c)
          dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
  return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& dy, std::size_t Hi, std::size_t Wi) {
  const std::size_t N = dy.extent(0), H = dy.extent(1), W = dy.extent(2), C = dy.extent(3);
  if (Hi == H && Wi == W) return dy;
  const auto ty = detail::resize_taps(Hi, H);
  const auto tx = detail::resize_taps(Wi, W);
  Tensor<T> dx({N, Hi, Wi, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const auto& [ilo, ihi, fy] = ty[i];
        const auto& [jlo, jhi, fx] = tx[j];
        const T* src = dy.data() + ((n * H + i) * W + j) * C;
        T* p00 = dx.data() + ((n * Hi + ilo) * Wi + jlo) * C;
        T* p01 = dx.data() + ((n * Hi + ilo) * Wi + jhi) * C;
        T* p10 = dx.data() + ((n * Hi + ihi) * Wi + jlo) * C;
        T* p11 = dx.data() + ((n * Hi + ihi) * Wi + jhi) * C;
        const T w00 = static_cast<T>((1 - fy) * (1 - fx));
        const T w01 = static_cast<T>((1 - fy) * fx);
        const T w10 = static_cast<T>(fy * (1 - fx));
        const T w11 = static_cast<T>(fy * fx);
        for (std::size_t c = 0; c < C; ++c) {
          p00[c] += w00 * src[c];
          p01[c] += w01 * src[c];
          p10[c] += w10 * src[c];
          p11[c] += w11 * src[c];
        }
      }
  return dx;
}

/// Depthwise 3x3 convolution with dilation, SAME zero padding, stride 1.
template <typename T>
Tensor<T> depthwise_conv3x3(const Tensor<T>& x, const Tensor<T>& filters, const Tensor<T>& bias,
                            std::size_t dilation) {
  require<ShapeError>(filters.rank() == 3 && filters.extent(0) == 3 && filters.extent(1) == 3,
                      "depthwise filters must be 3 x 3 x C");
  require<ShapeError>(filters.extent(2) == x.extent(3), "depthwise channel mismatch");
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
  const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(dilation);
  Tensor<T> y({N, H, W, C});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        T* dst = y.data() + ((n * H + i) * W + j) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] = bias[c];
        for (std::size_t u = 0; u < 3; ++u) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + (static_cast<std::ptrdiff_t>(u) - 1) * d;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t v = 0; v < 3; ++v) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j) + (static_cast<std::ptrdiff_t>(v) - 1) * d;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
            const T* src = x.data() + ((n * H + static_cast<std::size_t>(si)) * W +
                                       static_cast<std::size_t>(sj)) * C;
            const T* f = filters.data() + (u * 3 + v) * C;
            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c] * f[c];
          }
        }
      }
  return y;
}

template <typename T>
struct DepthwiseGrads {
  Tensor<T> filters, bias, input;
};

template <typename T>
DepthwiseGrads<T> depthwise_conv3x3_backward(const Tensor<T>& x, const Tensor<T>& filters,
                                             const Tensor<T>& dout, std::size_t dilation) {
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2), C = x.extent(3);
  const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(dilation);
  DepthwiseGrads<T> g{Tensor<T>(filters.shape()), Tensor<T>({C}), Tensor<T>(x.shape())};
  for (std::size_t i = 0; i < dout.size(); i += C)
    for (std::size_t c = 0; c < C; ++c) g.bias[c] += dout[i + c];
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const T* dy = dout.data() + ((n * H + i) * W + j) * C;
        for (std::size_t u = 0; u < 3; ++u) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) + (static_cast<std::ptrdiff_t>(u) - 1) * d;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t v = 0; v < 3; ++v) {
            const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j) + (static_cast<std::ptrdiff_t>(v) - 1) * d;
            if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
            const std::size_t off = ((n * H + static_cast<std::size_t>(si)) * W +
                                     static_cast<std::size_t>(sj)) * C;
            const T* src = x.data() + off;
            T* dxp = g.input.data() + off;
            const T* f = filters.data() + (u * 3 + v) * C;
            T* df = g.filters.data() + (u * 3 + v) * C;
            for (std::size_t c = 0; c < C; ++c) {
              df[c] += src[c] * dy[c];
              dxp[c] += f[c] * dy[c];
            }
          }
        }
      }
  return g;
}

/// One multiscale branch of g: average pool, dilated depthwise 3x3, bilinear
/// resize back to the input extent.
template <typename T>
struct DynamicBranch {
  std::size_t pool = 1;
  std::size_t dilation = 1;
  Tensor<T> filters;  // [3, 3, P]
  Tensor<T> bias;     // [P]
};

/// The lightweight network g predicting combining-weight logits per position:
/// 1x1 projection, parallel multiscale branches concatenated, nonlinear
/// bottleneck and expansion, linear 1x1 head to K channels.
template <typename T>
struct DynamicWeightNet {
  Tensor<T> proj_filters;  // [1, 1, Cin, P]
  Tensor<T> proj_bias;     // [P]
  std::vector<DynamicBranch<T>> branches;
  Tensor<T> bottleneck_filters;  // [1, 1, nb*P, Db]
  Tensor<T> bottleneck_bias;     // [Db]
  Tensor<T> expansion_filters;   // [1, 1, Db, De]
  Tensor<T> expansion_bias;      // [De]
  Tensor<T> head_filters;        // [1, 1, De, K]
  Tensor<T> head_bias;           // [K]

  std::size_t rank() const { return head_filters.extent(3); }
  std::size_t in_channels() const { return proj_filters.extent(2); }
  std::size_t projection_channels() const { return proj_filters.extent(3); }
};

template <typename T>
struct DynamicNetCache {
  Tensor<T> proj;
  std::vector<Tensor<T>> pooled;     // per branch, after pooling
  std::vector<Tensor<T>> dw_out;     // per branch, after depthwise
  Tensor<T> concat;
  Tensor<T> bottleneck_pre, bottleneck_out;
  Tensor<T> expansion_pre, expansion_out;
};

namespace detail {

template <typename T>
Tensor<T> conv1x1_bias(const Tensor<T>& x, const Tensor<T>& filters, const Tensor<T>& bias) {
  Tensor<T> y = conv2d(x, filters);
  const std::size_t C = bias.size();
  for (std::size_t i = 0; i < y.size(); i += C)
    for (std::size_t c = 0; c < C; ++c) y[i + c] += bias[c];
  return y;
}

}  // namespace detail

/// Evaluates g: one logit tensor [N, H, W, K] per example.
template <typename T>
Tensor<T> predict_logits(const DynamicWeightNet<T>& net, const Tensor<T>& x,
                         DynamicNetCache<T>* cache = nullptr) {
  require<ShapeError>(x.rank() == 4, "predict_logits input must be N x H x W x C");
  require<ShapeError>(x.extent(3) == net.in_channels(), "predict_logits channel mismatch: input ",
                      x.extent(3), ", projection expects ", net.in_channels());
  require<ConfigError>(!net.branches.empty(), "dynamic weight net needs at least one branch");
  const std::size_t H = x.extent(1), W = x.extent(2);
  const std::size_t P = net.projection_channels();
  const std::size_t nb = net.branches.size();

  Tensor<T> proj = detail::conv1x1_bias(x, net.proj_filters, net.proj_bias);

  Tensor<T> concat({x.extent(0), H, W, nb * P});
  std::vector<Tensor<T>> pooled_cache, dw_cache;
  for (std::size_t b = 0; b < nb; ++b) {
    const DynamicBranch<T>& br = net.branches[b];
    Tensor<T> pooled = avg_pool_down(proj, br.pool);
    Tensor<T> dw = depthwise_conv3x3(pooled, br.filters, br.bias, br.dilation);
    Tensor<T> resized = bilinear_resize(dw, H, W);
    for (std::size_t p = 0; p < resized.size() / P; ++p) {
      const T* src = resized.data() + p * P;
      T* dst = concat.data() + p * nb * P + b * P;
      for (std::size_t c = 0; c < P; ++c) dst[c] = src[c];
    }
    if (cache) {
      pooled_cache.push_back(std::move(pooled));
      dw_cache.push_back(std::move(dw));
    }
  }

  Tensor<T> bot_pre = detail::conv1x1_bias(concat, net.bottleneck_filters, net.bottleneck_bias);
  Tensor<T> bot = relu(bot_pre);
  Tensor<T> exp_pre = detail::conv1x1_bias(bot, net.expansion_filters, net.expansion_bias);
  Tensor<T> expanded = relu(exp_pre);
  Tensor<T> logits = detail::conv1x1_bias(expanded, net.head_filters, net.head_bias);

  if (cache) {
    cache->proj = std::move(proj);
    cache->pooled = std::move(pooled_cache);
    cache->dw_out = std::move(dw_cache);
    cache->concat = std::move(concat);
    cache->bottleneck_pre = std::move(bot_pre);
    cache->bottleneck_out = std::move(bot);
    cache->expansion_pre = std::move(exp_pre);
    cache->expansion_out = std::move(expanded);
  }
  return logits;
}

template <typename T>
struct DynamicNetGrads {
  Tensor<T> proj_filters, proj_bias;
  std::vector<Tensor<T>> branch_filters, branch_bias;
  Tensor<T> bottleneck_filters, bottleneck_bias;
  Tensor<T> expansion_filters, expansion_bias;
  Tensor<T> head_filters, head_bias;
  Tensor<T> input;
};

template <typename T>
DynamicNetGrads<T> predict_logits_backward(const DynamicWeightNet<T>& net, const Tensor<T>& x,
                                           const DynamicNetCache<T>& cache,
                                           const Tensor<T>& dlogits, bool need_dinput = true) {
  const std::size_t H = x.extent(1), W = x.extent(2);
  const std::size_t P = net.projection_channels();
  const std::size_t nb = net.branches.size();
  DynamicNetGrads<T> g;

  ConvGrads<T> head = conv2d_backward(cache.expansion_out, net.head_filters, dlogits, true);
  g.head_filters = std::move(head.filters);
  g.head_bias = std::move(head.bias);

  Tensor<T> d_exp = relu_backward(cache.expansion_pre, head.input);
  ConvGrads<T> expansion = conv2d_backward(cache.bottleneck_out, net.expansion_filters, d_exp, true);
  g.expansion_filters = std::move(expansion.filters);
  g.expansion_bias = std::move(expansion.bias);

  Tensor<T> d_bot = relu_backward(cache.bottleneck_pre, expansion.input);
  ConvGrads<T> bottleneck = conv2d_backward(cache.concat, net.bottleneck_filters, d_bot, true);
  g.bottleneck_filters = std::move(bottleneck.filters);
  g.bottleneck_bias = std::move(bottleneck.bias);

  Tensor<T> d_proj(cache.proj.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    const DynamicBranch<T>& br = net.branches[b];
    Tensor<T> d_resized({x.extent(0), H, W, P});
    for (std::size_t p = 0; p < d_resized.size() / P; ++p) {
      const T* src = bottleneck.input.data() + p * nb * P + b * P;
      T* dst = d_resized.data() + p * P;
      for (std::size_t c = 0; c < P; ++c) dst[c] = src[c];
    }
    const Tensor<T>& pooled = cache.pooled[b];
    Tensor<T> d_dw = bilinear_resize_backward(d_resized, pooled.extent(1), pooled.extent(2));
    DepthwiseGrads<T> dw = depthwise_conv3x3_backward(pooled, br.filters, d_dw, br.dilation);
    g.branch_filters.push_back(std::move(dw.filters));
    g.branch_bias.push_back(std::move(dw.bias));
    d_proj += avg_pool_down_backward(dw.input, br.pool, H, W);
  }

  ConvGrads<T> proj = conv2d_backward(x, net.proj_filters, d_proj, need_dinput);
  g.proj_filters = std::move(proj.filters);
  g.proj_bias = std::move(proj.bias);
  if (need_dinput) g.input = std::move(proj.input);
  return g;
}

/// LRLC layer whose combining weights are predicted from the input: basis
/// banks plus the weight network plus the spatially varying bias.
template <typename T>
struct DynamicLrlcLayer {
  FilterBasis<T> basis;
  DynamicWeightNet<T> net;
  SpatialBias<T> bias;
};

template <typename T>
struct DynamicLrlcCache {
  DynamicNetCache<T> net;
  Tensor<T> weights;  // [N, H, W, K]
  std::vector<Tensor<T>> per_bank;
};

/// Per-example normalized weight map [N, H, W, K].
template <typename T>
Tensor<T> dynamic_weight_map(const DynamicLrlcLayer<T>& layer, const Tensor<T>& x,
                             DynamicLrlcCache<T>* cache = nullptr) {
  Tensor<T> logits = predict_logits(layer.net, x, cache ? &cache->net : nullptr);
  Tensor<T> weights = softmax_lastdim(logits);
  if (cache) cache->weights = weights;
  return weights;
}

template <typename T>
Tensor<T> dynamic_lrlc_forward(const Tensor<T>& x, const DynamicLrlcLayer<T>& layer,
                               DynamicLrlcCache<T>* cache = nullptr) {
  require<ConfigError>(layer.basis.rank() >= 1, "dynamic lrlc requires K >= 1");
  require<ShapeError>(layer.net.rank() == layer.basis.rank(),
                      "weight net rank != basis rank");
  require<ShapeError>(x.rank() == 4 && x.extent(3) == layer.basis.in_channels(),
                      "dynamic lrlc input channel mismatch");
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t K = layer.basis.rank(), Cout = layer.basis.out_channels();
  const std::size_t positions = H * W;

  Tensor<T> weights = dynamic_weight_map(layer, x, cache);
  Tensor<T> out({N, H, W, Cout});
  if (cache) cache->per_bank.clear();
  for (std::size_t k = 0; k < K; ++k) {
    Tensor<T> bank({layer.basis.filter_h(), layer.basis.filter_w(), layer.basis.in_channels(),
                    Cout});
    const T* src = layer.basis.banks.data() + k * layer.basis.bank_size();
    std::copy(src, src + bank.size(), bank.data());
    Tensor<T> conv_k = conv2d(x, bank);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < positions; ++p) {
        const T w = weights[(n * positions + p) * K + k];
        T* dst = out.data() + (n * positions + p) * Cout;
        const T* ck = conv_k.data() + (n * positions + p) * Cout;
        for (std::size_t c = 0; c < Cout; ++c) dst[c] += w * ck[c];
      }
    if (cache) cache->per_bank.push_back(std::move(conv_k));
  }
  return spatial_bias_add(out, layer.bias);
}

template <typename T>
struct DynamicLrlcGrads {
  Tensor<T> banks;
  DynamicNetGrads<T> net;
  SpatialBias<T> bias;
  Tensor<T> input;
};

template <typename T>
DynamicLrlcGrads<T> dynamic_lrlc_backward(const Tensor<T>& x, const DynamicLrlcLayer<T>& layer,
                                          const DynamicLrlcCache<T>& cache, const Tensor<T>& dout,
                                          bool need_dinput = true) {
  const std::size_t N = x.extent(0), H = x.extent(1), W = x.extent(2);
  const std::size_t K = layer.basis.rank(), Cout = layer.basis.out_channels();
  const std::size_t positions = H * W;

  DynamicLrlcGrads<T> g;
  g.banks = Tensor<T>(layer.basis.banks.shape());
  g.bias = spatial_bias_backward(dout);
  if (need_dinput) g.input = Tensor<T>(x.shape());

  Tensor<T> dweights({N, H, W, K});
  Tensor<T> dconv({N, H, W, Cout});
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor<T>& conv_k = cache.per_bank[k];
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < positions; ++p) {
        const T* do_ = dout.data() + (n * positions + p) * Cout;
        const T* ck = conv_k.data() + (n * positions + p) * Cout;
        T* dc = dconv.data() + (n * positions + p) * Cout;
        const T w = cache.weights[(n * positions + p) * K + k];
        T acc = 0;
        for (std::size_t c = 0; c < Cout; ++c) {
          acc += do_[c] * ck[c];
          dc[c] = w * do_[c];
        }
        dweights[(n * positions + p) * K + k] = acc;
      }
    Tensor<T> bank({layer.basis.filter_h(), layer.basis.filter_w(), layer.basis.in_channels(),
                    Cout});
    const T* src = layer.basis.banks.data() + k * layer.basis.bank_size();
    std::copy(src, src + bank.size(), bank.data());
    ConvGrads<T> cg = conv2d_backward(x, bank, dconv, need_dinput);
    std::copy(cg.filters.data(), cg.filters.data() + cg.filters.size(),
              g.banks.data() + k * layer.basis.bank_size());
    if (need_dinput) g.input += cg.input;
  }

  Tensor<T> dlogits = softmax_lastdim_backward(cache.weights, dweights);
  g.net = predict_logits_backward(layer.net, x, cache.net, dlogits, need_dinput);
  if (need_dinput) g.input += g.net.input;
  return g;
}

/// Builds g with fan-in scaled initialization; the linear head starts at zero
/// so the layer begins as a uniform 1/K mixture of the basis (the dynamic
/// analog of the structured initialization).
template <typename T>
DynamicWeightNet<T> make_dynamic_net(std::size_t cin, std::size_t K, const DynamicNetShape& shape,
                                     Rng& rng) {
  require<ConfigError>(!shape.branches.empty(), "dynamic net needs at least one branch");
  DynamicWeightNet<T> net;
  const std::size_t P = shape.projection;
  net.proj_filters = Tensor<T>({1, 1, cin, P});
  init_fan_in_uniform(net.proj_filters, cin, rng);
  net.proj_bias = Tensor<T>({P});
  for (const auto& [pool, dilation] : shape.branches) {
    DynamicBranch<T> br;
    br.pool = pool;
    br.dilation = dilation;
    br.filters = Tensor<T>({3, 3, P});
    init_fan_in_uniform(br.filters, 9, rng);
    br.bias = Tensor<T>({P});
    net.branches.push_back(std::move(br));
  }
  const std::size_t concat = shape.branches.size() * P;
  net.bottleneck_filters = Tensor<T>({1, 1, concat, shape.bottleneck});
  init_fan_in_uniform(net.bottleneck_filters, concat, rng);
  net.bottleneck_bias = Tensor<T>({shape.bottleneck});
  net.expansion_filters = Tensor<T>({1, 1, shape.bottleneck, shape.expansion});
  init_fan_in_uniform(net.expansion_filters, shape.bottleneck, rng);
  net.expansion_bias = Tensor<T>({shape.expansion});
  net.head_filters = Tensor<T>({1, 1, shape.expansion, K});
  net.head_bias = Tensor<T>({K});
  return net;
}

template <typename T>
DynamicLrlcLayer<T> make_dynamic_lrlc(std::size_t H, std::size_t W, std::size_t fh, std::size_t fw,
                                      std::size_t cin, std::size_t cout, std::size_t K,
                                      const DynamicNetShape& shape, Rng& rng) {
  require<ConfigError>(K >= 1, "dynamic lrlc rank must be >= 1");
  DynamicLrlcLayer<T> layer;
  layer.basis.banks = Tensor<T>({K, fh, fw, cin, cout});
  init_fan_in_uniform(layer.basis.banks, fh * fw * cin, rng);
  layer.net = make_dynamic_net<T>(cin, K, shape, rng);
  layer.bias = SpatialBias<T>{Tensor<T>({H}), Tensor<T>({W}), Tensor<T>({cout})};
  return layer;
}

}  // namespace lrlc
