#include "lrlc/cost.hpp"

namespace lrlc {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kLocal: return "local";
    case LayerKind::kCoordConv: return "coordconv";
    case LayerKind::kLrlc: return "lrlc";
    case LayerKind::kDynamicLrlc: return "dynamic_lrlc";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "conv") return LayerKind::kConv;
  if (name == "local") return LayerKind::kLocal;
  if (name == "coordconv") return LayerKind::kCoordConv;
  if (name == "lrlc") return LayerKind::kLrlc;
  if (name == "dynamic_lrlc") return LayerKind::kDynamicLrlc;
  throw ConfigError("unknown layer kind \"" + name + "\"");
}

namespace detail {

std::size_t dynamic_net_params(const LayerCostSpec& spec) {
  const DynamicNetShape& g = spec.gnet;
  const std::size_t P = g.projection;
  std::size_t params = spec.in_channels * P + P;  // 1x1 projection
  for (std::size_t b = 0; b < g.branches.size(); ++b) params += 3 * 3 * P + P;  // depthwise
  const std::size_t concat = g.branches.size() * P;
  params += concat * g.bottleneck + g.bottleneck;
  params += g.bottleneck * g.expansion + g.expansion;
  params += g.expansion * spec.rank + spec.rank;  // linear head to K
  return params;
}

std::size_t dynamic_net_macs(const LayerCostSpec& spec) {
  const DynamicNetShape& g = spec.gnet;
  const std::size_t H = spec.height, W = spec.width, P = g.projection;
  std::size_t macs = H * W * spec.in_channels * P;
  for (const auto& [pool, dilation] : g.branches) {
    (void)dilation;  // SAME padding keeps the MAC count dilation-independent
    const std::size_t hs = ceil_div(H, pool), ws = ceil_div(W, pool);
    macs += hs * ws * 3 * 3 * P;                  // depthwise 3x3
    if (pool > 1) macs += 4 * H * W * P;          // bilinear resize, 4 taps
  }
  const std::size_t concat = g.branches.size() * P;
  macs += H * W * concat * g.bottleneck;
  macs += H * W * g.bottleneck * g.expansion;
  macs += H * W * g.expansion * spec.rank;
  return macs;
}

}  // namespace detail

CostReport count_params(const LayerCostSpec& spec) {
  require<ConfigError>(spec.height > 0 && spec.width > 0 && spec.in_channels > 0 &&
                           spec.out_channels > 0,
                       "count_params: layer extents must be fully specified");
  const std::size_t H = spec.height, W = spec.width;
  const std::size_t bank = spec.filter_h * spec.filter_w * spec.in_channels * spec.out_channels;
  CostReport r;
  switch (spec.kind) {
    case LayerKind::kConv:
      r.params_basis = bank;
      r.params_biases = spec.out_channels;
      break;
    case LayerKind::kCoordConv:
      r.params_basis = spec.filter_h * spec.filter_w * (spec.in_channels + 2) * spec.out_channels;
      r.params_biases = spec.out_channels;
      break;
    case LayerKind::kLocal:
      r.params_basis = H * W * bank;
      r.params_biases = spec.out_channels;
      break;
    case LayerKind::kLrlc:
      require<ConfigError>(spec.rank >= 1, "count_params: lrlc rank must be >= 1");
      r.params_basis = spec.rank * bank;
      r.params_combining = spec.factorized ? (H + W) * spec.rank : H * W * spec.rank;
      r.params_biases = H + W + spec.out_channels;
      break;
    case LayerKind::kDynamicLrlc:
      require<ConfigError>(spec.rank >= 1, "count_params: lrlc rank must be >= 1");
      r.params_basis = spec.rank * bank;
      r.params_combining = detail::dynamic_net_params(spec);
      r.params_biases = H + W + spec.out_channels;
      break;
  }
  r.params_total = r.params_basis + r.params_combining + r.params_biases;
  return r;
}

CostReport count_flops(const LayerCostSpec& spec, CostMode mode) {
  CostReport r = count_params(spec);
  const std::size_t H = spec.height, W = spec.width;
  const std::size_t conv_macs =
      H * W * spec.filter_h * spec.filter_w * spec.in_channels * spec.out_channels;
  const std::size_t bias_adds = H * W * spec.out_channels;

  switch (spec.kind) {
    case LayerKind::kConv:
    case LayerKind::kLocal:
      // Locally connected layers run the same multiply-accumulates as
      // convolution; only the weights differ per position.
      r.macs = conv_macs;
      r.elementwise = bias_adds;
      r.lowered_param_bytes = r.params_total * sizeof(float);
      return r;
    case LayerKind::kCoordConv:
      r.macs = H * W * spec.filter_h * spec.filter_w * (spec.in_channels + 2) * spec.out_channels;
      r.elementwise = bias_adds + 2 * H * W;  // coordinate channel fill
      r.lowered_param_bytes = r.params_total * sizeof(float);
      return r;
    case LayerKind::kLrlc: {
      const std::size_t K = spec.rank;
      const std::size_t softmax_ops = 4 * H * W * K;
      const std::size_t combine_ops = 2 * H * W * spec.out_channels * K;
      if (mode == CostMode::kLoweredInference) {
        r.macs = conv_macs;
        r.elementwise = bias_adds;
        const std::size_t lowered_params =
            H * W * spec.filter_h * spec.filter_w * spec.in_channels * spec.out_channels +
            (H + W + spec.out_channels);
        r.lowered_param_bytes = lowered_params * sizeof(float);
      } else {
        r.macs = K * conv_macs;
        r.elementwise = combine_ops + softmax_ops + bias_adds;
        r.lowered_param_bytes = r.params_total * sizeof(float);
      }
      return r;
    }
    case LayerKind::kDynamicLrlc: {
      require<UnsupportedError>(mode != CostMode::kLoweredInference,
                                "dynamic lrlc cannot be lowered: per-example filters cannot be "
                                "pre-materialized");
      const std::size_t K = spec.rank;
      r.macs = K * conv_macs + detail::dynamic_net_macs(spec);
      r.elementwise = 2 * H * W * spec.out_channels * K + 4 * H * W * K + bias_adds;
      r.lowered_param_bytes = r.params_total * sizeof(float);
      return r;
    }
  }
  throw ConfigError("count_flops: unhandled layer kind");
}

}  // namespace lrlc
