#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lrlc/errors.hpp"

namespace lrlc {

enum class LayerKind { kConv, kLocal, kCoordConv, kLrlc, kDynamicLrlc };

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

/// Architecture of the combining-weights network g. Sizes are defaults chosen
/// to keep g light; all are configurable.
struct DynamicNetShape {
  std::size_t projection = 8;
  std::size_t bottleneck = 8;
  std::size_t expansion = 32;
  /// (pool window, dilation) per parallel branch.
  std::vector<std::pair<std::size_t, std::size_t>> branches = {{1, 1}, {2, 2}, {4, 4}};
};

/// Extents needed to cost one spatial layer.
struct LayerCostSpec {
  LayerKind kind = LayerKind::kConv;
  std::size_t height = 0, width = 0;
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t filter_h = 3, filter_w = 3;
  std::size_t rank = 1;      // lrlc / dynamic_lrlc
  bool factorized = true;    // lrlc combining weights
  DynamicNetShape gnet;      // dynamic_lrlc
};

enum class CostMode { kTrain, kLoweredInference, kDynamic };

/// Parameter and FLOP accounting. MACs count multiply-accumulates only;
/// pointwise work (weighted combination, softmax, bias adds, pooling) is
/// reported separately in `elementwise`.
struct CostReport {
  std::size_t params_total = 0;
  std::size_t params_basis = 0;      // filter banks
  std::size_t params_combining = 0;  // alpha/beta, full table, or g-network
  std::size_t params_biases = 0;
  std::size_t macs = 0;              // per example
  std::size_t elementwise = 0;       // per example
  std::size_t lowered_param_bytes = 0;
};

CostReport count_params(const LayerCostSpec& spec);
CostReport count_flops(const LayerCostSpec& spec, CostMode mode);

namespace detail {

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// MACs of the combining-weights network g on an H x W x Cin input.
std::size_t dynamic_net_macs(const LayerCostSpec& spec);
std::size_t dynamic_net_params(const LayerCostSpec& spec);

}  // namespace detail

}  // namespace lrlc
