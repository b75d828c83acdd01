#pragma once

#include <vector>

#include "lrlc/layers.hpp"

namespace lrlc {

/// The K filter banks shared across positions (the basis set).
template <typename T>
struct FilterBasis {
  Tensor<T> banks;  // [K, h, w, Cin, Cout]

  std::size_t rank() const { return banks.extent(0); }
  std::size_t filter_h() const { return banks.extent(1); }
  std::size_t filter_w() const { return banks.extent(2); }
  std::size_t in_channels() const { return banks.extent(3); }
  std::size_t out_channels() const { return banks.extent(4); }
  std::size_t bank_size() const { return banks.size() / rank(); }
};

enum class WeightsMode { kFactorized, kFull };

/// Per-position combining weights. Factorized mode stores per-row and
/// per-column factors; full mode stores the whole logit table (the
/// non-factorized ablation).
template <typename T>
struct CombiningWeights {
  WeightsMode mode = WeightsMode::kFactorized;
  Tensor<T> alpha;  // [K, H] (factorized)
  Tensor<T> beta;   // [K, W] (factorized)
  Tensor<T> table;  // [H, W, K] (full)

  std::size_t rank() const {
    return mode == WeightsMode::kFactorized ? alpha.extent(0) : table.extent(2);
  }
  std::size_t height() const {
    return mode == WeightsMode::kFactorized ? alpha.extent(1) : table.extent(0);
  }
  std::size_t width() const {
    return mode == WeightsMode::kFactorized ? beta.extent(1) : table.extent(1);
  }
};

/// Low-rank locally connected layer bound to a fixed H x W extent.
template <typename T>
struct LrlcLayer {
  FilterBasis<T> basis;
  CombiningWeights<T> weights;
  SpatialBias<T> bias;

  std::size_t height() const { return weights.height(); }
  std::size_t width() const { return weights.width(); }
};

/// Pre-normalization combining logits per position: the per-row/per-column
/// outer sum in factorized mode, or the stored table in full mode.
template <typename T>
Tensor<T> combine_logits(const CombiningWeights<T>& w, std::size_t H, std::size_t W) {
  require<ShapeError>(w.height() == H && w.width() == W, "combining weights bound to ",
                      w.height(), "x", w.width(), " but asked for ", H, "x", W);
  if (w.mode == WeightsMode::kFull) return w.table;
  const std::size_t K = w.rank();
  Tensor<T> logits({H, W, K});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t k = 0; k < K; ++k) logits(i, j, k) = w.alpha(k, i) + w.beta(k, j);
  return logits;
}

/// Softmax over the rank axis at each position.
template <typename T>
Tensor<T> normalize_weights(const Tensor<T>& logits) {
  require_finite(logits, "normalize_weights");
  return softmax_lastdim(logits);
}

/// Normalized per-position weights of a layer, shape [H, W, K].
template <typename T>
Tensor<T> normalized_weight_map(const LrlcLayer<T>& layer) {
  return normalize_weights(combine_logits(layer.weights, layer.height(), layer.width()));
}

namespace detail {

template <typename T>
void check_lrlc_input(const Tensor<T>& x, const LrlcLayer<T>& layer) {
  require<ConfigError>(layer.basis.rank() >= 1, "lrlc layer requires K >= 1");
  require<ShapeError>(x.rank() == 4, "lrlc input must be N x H x W x C");
  require<ShapeError>(x.extent(1) == layer.height() && x.extent(2) == layer.width(),
                      "lrlc layer bound to ", layer.height(), "x", layer.width(),
                      " but input is ", x.extent(1), "x", x.extent(2));
  require<ShapeError>(x.extent(3) == layer.basis.in_channels(), "lrlc channel mismatch");
  require<ShapeError>(layer.weights.rank() == layer.basis.rank(),
                      "combining weights rank ", layer.weights.rank(),
                      " != basis rank ", layer.basis.rank());
}

/// O += w[., k] (broadcast over batch and channels) * C_k
template <typename T>
void weighted_accumulate(Tensor<T>& out, const Tensor<T>& conv_k, const Tensor<T>& weights,
                         std::size_t k) {
  const std::size_t N = out.extent(0);
  const std::size_t positions = out.extent(1) * out.extent(2);
  const std::size_t C = out.extent(3);
  const std::size_t K = weights.extent(weights.rank() - 1);
  exec::parallel_for(N, [&](std::size_t n0, std::size_t n1) {
    for (std::size_t n = n0; n < n1; ++n)
      for (std::size_t p = 0; p < positions; ++p) {
        const T w = weights[p * K + k];
        T* dst = out.data() + (n * positions + p) * C;
        const T* src = conv_k.data() + (n * positions + p) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += w * src[c];
      }
  });
}

}  // namespace detail

template <typename T>
struct LrlcCache {
  Tensor<T> weights;                 // normalized, [H, W, K]
  std::vector<Tensor<T>> per_bank;   // conv outputs per basis bank
};

/// Training-path evaluation: K convolutions with the basis banks, combined by
/// the normalized per-position weights, plus the spatially varying bias.
template <typename T>
Tensor<T> lrlc_forward(const Tensor<T>& x, const LrlcLayer<T>& layer,
                       LrlcCache<T>* cache = nullptr) {
  detail::check_lrlc_input(x, layer);
  const std::size_t K = layer.basis.rank();
  const Tensor<T> weights = normalized_weight_map(layer);
  Tensor<T> out({x.extent(0), layer.height(), layer.width(), layer.basis.out_channels()});
  if (cache) cache->per_bank.clear();
  for (std::size_t k = 0; k < K; ++k) {
    Tensor<T> bank({layer.basis.filter_h(), layer.basis.filter_w(), layer.basis.in_channels(),
                    layer.basis.out_channels()});
    const T* src = layer.basis.banks.data() + k * layer.basis.bank_size();
    std::copy(src, src + bank.size(), bank.data());
    Tensor<T> conv_k = conv2d(x, bank);
    detail::weighted_accumulate(out, conv_k, weights, k);
    if (cache) cache->per_bank.push_back(std::move(conv_k));
  }
  out = spatial_bias_add(out, layer.bias);
  if (cache) cache->weights = weights;
  return out;
}

template <typename T>
struct LrlcGrads {
  Tensor<T> banks;        // [K, h, w, Cin, Cout]
  Tensor<T> alpha, beta;  // factorized mode
  Tensor<T> table;        // full mode
  SpatialBias<T> bias;
  Tensor<T> input;
};

template <typename T>
LrlcGrads<T> lrlc_backward(const Tensor<T>& x, const LrlcLayer<T>& layer,
                           const LrlcCache<T>& cache, const Tensor<T>& dout,
                           bool need_dinput = true) {
  detail::check_lrlc_input(x, layer);
  const std::size_t K = layer.basis.rank();
  const std::size_t N = x.extent(0), H = layer.height(), W = layer.width();
  const std::size_t Cout = layer.basis.out_channels();
  const std::size_t positions = H * W;

  LrlcGrads<T> g;
  g.banks = Tensor<T>(layer.basis.banks.shape());
  g.bias = spatial_bias_backward(dout);
  if (need_dinput) g.input = Tensor<T>(x.shape());

  // dw[p, k] = sum_{n, c} dout * conv_k ; dconv_k = w[p, k] * dout
  Tensor<T> dweights({H, W, K});
  Tensor<T> dconv({N, H, W, Cout});
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor<T>& conv_k = cache.per_bank[k];
    // positions split across workers; the batch reduction per position stays
    // in increasing n order
    exec::parallel_for(positions, [&](std::size_t p0, std::size_t p1) {
      for (std::size_t p = p0; p < p1; ++p) {
        const T w = cache.weights[p * K + k];
        T acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* do_ = dout.data() + (n * positions + p) * Cout;
          const T* ck = conv_k.data() + (n * positions + p) * Cout;
          T* dc = dconv.data() + (n * positions + p) * Cout;
          for (std::size_t c = 0; c < Cout; ++c) {
            acc += do_[c] * ck[c];
            dc[c] = w * do_[c];
          }
        }
        dweights[p * K + k] = acc;
      }
    });
    Tensor<T> bank({layer.basis.filter_h(), layer.basis.filter_w(), layer.basis.in_channels(),
                    Cout});
    const T* src = layer.basis.banks.data() + k * layer.basis.bank_size();
    std::copy(src, src + bank.size(), bank.data());
    ConvGrads<T> cg = conv2d_backward(x, bank, dconv, need_dinput);
    std::copy(cg.filters.data(), cg.filters.data() + cg.filters.size(),
              g.banks.data() + k * layer.basis.bank_size());
    if (need_dinput) g.input += cg.input;
  }

  const Tensor<T> dlogits = softmax_lastdim_backward(cache.weights, dweights);
  if (layer.weights.mode == WeightsMode::kFactorized) {
    g.alpha = Tensor<T>({K, H});
    g.beta = Tensor<T>({K, W});
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        for (std::size_t k = 0; k < K; ++k) {
          g.alpha(k, i) += dlogits(i, j, k);
          g.beta(k, j) += dlogits(i, j, k);
        }
  } else {
    g.table = dlogits;
  }
  return g;
}

/// An LRLC layer materialized as a locally connected layer for inference;
/// the spatially varying bias rides along unchanged.
template <typename T>
struct LoweredLrlc {
  LocalLayer<T> local;
  SpatialBias<T> bias;
};

/// Materializes F^(i,j) = sum_k w[i,j,k] F^(k) at every position.
template <typename T>
LoweredLrlc<T> lower_to_local(const LrlcLayer<T>& layer) {
  const std::size_t K = layer.basis.rank();
  const std::size_t H = layer.height(), W = layer.width();
  const std::size_t bank = layer.basis.bank_size();
  const Tensor<T> weights = normalized_weight_map(layer);
  require_finite(weights, "lower_to_local");

  LoweredLrlc<T> out;
  out.local.filters = Tensor<T>({H, W, layer.basis.filter_h(), layer.basis.filter_w(),
                                 layer.basis.in_channels(), layer.basis.out_channels()});
  out.local.bias = Tensor<T>({layer.basis.out_channels()});
  out.bias = layer.bias;
  for (std::size_t p = 0; p < H * W; ++p) {
    T* dst = out.local.filters.data() + p * bank;
    for (std::size_t k = 0; k < K; ++k) {
      const T w = weights[p * K + k];
      const T* src = layer.basis.banks.data() + k * bank;
      for (std::size_t e = 0; e < bank; ++e) dst[e] += w * src[e];
    }
  }
  return out;
}

template <typename T>
Tensor<T> lowered_forward(const Tensor<T>& x, const LoweredLrlc<T>& lowered) {
  return spatial_bias_add(local_forward(x, lowered.local), lowered.bias);
}

/// Structured initialization: every pre-softmax logit equals 1/sqrt(K), so the
/// normalized weights start uniform at 1/K and the layer behaves as a
/// convolution with a random kernel. Basis banks draw from the fan-in scaled
/// uniform; biases start at zero.
template <typename T>
void init_structured(LrlcLayer<T>& layer, Rng& rng) {
  const std::size_t K = layer.basis.rank();
  const double logit = 1.0 / std::sqrt(static_cast<double>(K));
  init_fan_in_uniform(layer.basis.banks,
                      layer.basis.filter_h() * layer.basis.filter_w() * layer.basis.in_channels(),
                      rng);
  if (layer.weights.mode == WeightsMode::kFactorized) {
    layer.weights.alpha.fill(static_cast<T>(logit / 2));
    layer.weights.beta.fill(static_cast<T>(logit / 2));
  } else {
    layer.weights.table.fill(static_cast<T>(logit));
  }
  layer.bias.row.fill(T{0});
  layer.bias.col.fill(T{0});
  layer.bias.channel.fill(T{0});
}

template <typename T>
LrlcLayer<T> make_lrlc(std::size_t H, std::size_t W, std::size_t fh, std::size_t fw,
                       std::size_t cin, std::size_t cout, std::size_t K, Rng& rng,
                       WeightsMode mode = WeightsMode::kFactorized) {
  require<ConfigError>(K >= 1, "lrlc rank must be >= 1");
  require<ConfigError>(K <= H * W, "lrlc rank ", K, " exceeds H*W = ", H * W);
  LrlcLayer<T> layer;
  layer.basis.banks = Tensor<T>({K, fh, fw, cin, cout});
  layer.weights.mode = mode;
  if (mode == WeightsMode::kFactorized) {
    layer.weights.alpha = Tensor<T>({K, H});
    layer.weights.beta = Tensor<T>({K, W});
  } else {
    layer.weights.table = Tensor<T>({H, W, K});
  }
  layer.bias = SpatialBias<T>{Tensor<T>({H}), Tensor<T>({W}), Tensor<T>({cout})};
  init_structured(layer, rng);
  return layer;
}

}  // namespace lrlc
