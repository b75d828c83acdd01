#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "lrlc/cost.hpp"
#include "lrlc/dynamic.hpp"
#include "oracles.hpp"

using namespace lrlc;

namespace {

DynamicNetShape tiny_shape() {
  DynamicNetShape s;
  s.projection = 2;
  s.bottleneck = 2;
  s.expansion = 3;
  s.branches = {{1, 1}, {2, 2}};
  return s;
}

std::vector<TensorD> net_param_vector(const DynamicLrlcLayer<double>& layer) {
  return {layer.basis.banks,
          layer.net.proj_filters,
          layer.net.proj_bias,
          layer.net.branches[0].filters,
          layer.net.branches[0].bias,
          layer.net.branches[1].filters,
          layer.net.branches[1].bias,
          layer.net.bottleneck_filters,
          layer.net.bottleneck_bias,
          layer.net.expansion_filters,
          layer.net.expansion_bias,
          layer.net.head_filters,
          layer.net.head_bias,
          layer.bias.row,
          layer.bias.col,
          layer.bias.channel};
}

DynamicLrlcLayer<double> layer_from_params(const DynamicNetShape& shape,
                                           const std::vector<TensorD>& p, std::size_t offset) {
  DynamicLrlcLayer<double> layer;
  layer.basis.banks = p[offset + 0];
  layer.net.proj_filters = p[offset + 1];
  layer.net.proj_bias = p[offset + 2];
  for (std::size_t b = 0; b < 2; ++b) {
    DynamicBranch<double> br;
    br.pool = shape.branches[b].first;
    br.dilation = shape.branches[b].second;
    br.filters = p[offset + 3 + 2 * b];
    br.bias = p[offset + 4 + 2 * b];
    layer.net.branches.push_back(std::move(br));
  }
  layer.net.bottleneck_filters = p[offset + 7];
  layer.net.bottleneck_bias = p[offset + 8];
  layer.net.expansion_filters = p[offset + 9];
  layer.net.expansion_bias = p[offset + 10];
  layer.net.head_filters = p[offset + 11];
  layer.net.head_bias = p[offset + 12];
  layer.bias = SpatialBias<double>{p[offset + 13], p[offset + 14], p[offset + 15]};
  return layer;
}

}  // namespace

TEST_CASE("avg_pool_down ceil mode with partial edge windows") {
  TensorD x({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  TensorD y = avg_pool_down(x, 2);
  REQUIRE(y.shape() == Shape{1, 2, 2, 1});
  CHECK(y[0] == doctest::Approx((1 + 2 + 4 + 5) / 4.0));
  CHECK(y[1] == doctest::Approx((3 + 6) / 2.0));
  CHECK(y[2] == doctest::Approx((7 + 8) / 2.0));
  CHECK(y[3] == doctest::Approx(9.0));
  CHECK(avg_pool_down(x, 1) == x);
}

TEST_CASE("bilinear_resize: constant extension, bit-exact identity, 2x2 oracle") {
  TensorD one({1, 1, 1, 1}, {3.5});
  TensorD big = bilinear_resize(one, 4, 5);
  for (double v : big.values()) CHECK(v == 3.5);

  Rng rng(3);
  TensorD x = oracle::random_tensor<double>({2, 3, 4, 2}, rng);
  CHECK(bilinear_resize(x, 3, 4) == x);  // bitwise identity

  TensorD grid({1, 2, 2, 1}, {0.0, 1.0, 2.0, 3.0});
  TensorD up = bilinear_resize(grid, 4, 4);
  TensorD want = oracle::bilinear(grid, 4, 4);
  CHECK(max_abs_diff(up, want) <= 1e-12);

  CHECK_THROWS_AS(bilinear_resize(x, 0, 4), ConfigError);
}

TEST_CASE("pool / resize / depthwise gradient checks") {
  Rng rng(5);
  {
    auto fwd = [](const std::vector<TensorD>& in) { return avg_pool_down(in[0], 2); };
    auto bwd = [](const std::vector<TensorD>& in, const TensorD& dout) {
      return std::vector<TensorD>{
          avg_pool_down_backward(dout, 2, in[0].extent(1), in[0].extent(2))};
    };
    CHECK(oracle::check_tensor_op("avg_pool", fwd, bwd,
                                  {oracle::random_tensor<double>({2, 5, 5, 2}, rng)})
              .pass);
  }
  {
    auto fwd = [](const std::vector<TensorD>& in) { return bilinear_resize(in[0], 7, 6); };
    auto bwd = [](const std::vector<TensorD>& in, const TensorD& dout) {
      return std::vector<TensorD>{bilinear_resize_backward(dout, in[0].extent(1), in[0].extent(2))};
    };
    CHECK(oracle::check_tensor_op("bilinear", fwd, bwd,
                                  {oracle::random_tensor<double>({1, 3, 4, 2}, rng)})
              .pass);
  }
  {
    auto fwd = [](const std::vector<TensorD>& in) {
      return depthwise_conv3x3(in[0], in[1], in[2], 2);
    };
    auto bwd = [](const std::vector<TensorD>& in, const TensorD& dout) {
      DepthwiseGrads<double> g = depthwise_conv3x3_backward(in[0], in[1], dout, 2);
      return std::vector<TensorD>{g.input, g.filters, g.bias};
    };
    CHECK(oracle::check_tensor_op("depthwise", fwd, bwd,
                                  {oracle::random_tensor<double>({2, 6, 6, 3}, rng),
                                   oracle::random_tensor<double>({3, 3, 3}, rng),
                                   oracle::random_tensor<double>({3}, rng)})
              .pass);
  }
}

TEST_CASE("predict_logits: zero parameters give uniform downstream weights") {
  Rng rng(7);
  DynamicLrlcLayer<double> layer = make_dynamic_lrlc<double>(6, 6, 3, 3, 2, 2, 3, tiny_shape(), rng);
  // zero every g parameter, not just the head
  for (TensorD* t : {&layer.net.proj_filters, &layer.net.proj_bias,
                     &layer.net.bottleneck_filters, &layer.net.bottleneck_bias,
                     &layer.net.expansion_filters, &layer.net.expansion_bias,
                     &layer.net.head_filters, &layer.net.head_bias})
    t->fill(0.0);
  for (auto& br : layer.net.branches) {
    br.filters.fill(0.0);
    br.bias.fill(0.0);
  }
  TensorD x = oracle::random_tensor<double>({2, 6, 6, 2}, rng);
  TensorD logits = predict_logits(layer.net, x);
  for (double v : logits.values()) CHECK(v == 0.0);
  TensorD w = dynamic_weight_map(layer, x);
  for (double v : w.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("predict_logits: spatially constant input gives constant interior logits") {
  Rng rng(11);
  const std::size_t H = 16, W = 16;
  DynamicNetShape shape = tiny_shape();
  shape.branches = {{1, 1}, {2, 1}};
  DynamicLrlcLayer<double> layer = make_dynamic_lrlc<double>(H, W, 3, 3, 1, 2, 2, shape, rng);
  rng.fill_uniform(layer.net.head_filters, -1.0, 1.0);  // nonzero head

  TensorD x = TensorD::full({1, H, W, 1}, 0.7);
  TensorD logits = predict_logits(layer.net, x);
  // interior margin: depthwise radius (1 pooled cell) + resize taps, x pool 2
  const std::size_t m = 4;
  for (std::size_t k = 0; k < 2; ++k) {
    const double ref = logits(std::size_t{0}, m, m, k);
    for (std::size_t i = m; i < H - m; ++i)
      for (std::size_t j = m; j < W - m; ++j)
        CHECK(logits(std::size_t{0}, i, j, k) == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("predict_logits shape contract holds across input extents") {
  Rng rng(13);
  DynamicNetShape shape = tiny_shape();
  DynamicLrlcLayer<double> a = make_dynamic_lrlc<double>(28, 28, 3, 3, 1, 2, 4, shape, rng);
  TensorD x28 = oracle::random_tensor<double>({1, 28, 28, 1}, rng);
  CHECK(predict_logits(a.net, x28).shape() == Shape{1, 28, 28, 4});
  // the same g applied to a 32x32 field still yields H x W x K
  TensorD x32 = oracle::random_tensor<double>({2, 32, 32, 1}, rng);
  CHECK(predict_logits(a.net, x32).shape() == Shape{2, 32, 32, 4});
  CHECK_THROWS_AS(predict_logits(a.net, oracle::random_tensor<double>({1, 28, 28, 3}, rng)),
                  ShapeError);
}

TEST_CASE("dynamic lrlc with zeroed g equals fixed lrlc with uniform weights") {
  Rng rng(17);
  const std::size_t H = 5, W = 5, C = 2, Cout = 3, K = 2;
  DynamicLrlcLayer<double> dyn = make_dynamic_lrlc<double>(H, W, 3, 3, C, Cout, K, tiny_shape(), rng);
  // make_dynamic_lrlc zero-initializes the head, so logits are already 0
  rng.fill_uniform(dyn.bias.row, -0.3, 0.3);
  rng.fill_uniform(dyn.bias.col, -0.3, 0.3);
  rng.fill_uniform(dyn.bias.channel, -0.3, 0.3);

  LrlcLayer<double> fixed = make_lrlc<double>(H, W, 3, 3, C, Cout, K, rng);
  fixed.basis.banks = dyn.basis.banks;
  fixed.bias = dyn.bias;  // structured init leaves weights uniform

  TensorD x = oracle::random_tensor<double>({2, H, W, C}, rng);
  CHECK(max_abs_diff(dynamic_lrlc_forward(x, dyn), lrlc_forward(x, fixed)) <= 1e-12);
}

TEST_CASE("dynamic lrlc with K=1 equals convolution plus spatial bias regardless of g") {
  Rng rng(19);
  const std::size_t H = 5, W = 4, C = 2, Cout = 2;
  DynamicLrlcLayer<double> dyn = make_dynamic_lrlc<double>(H, W, 3, 3, C, Cout, 1, tiny_shape(), rng);
  rng.fill_uniform(dyn.net.head_filters, -2.0, 2.0);
  rng.fill_uniform(dyn.net.head_bias, -2.0, 2.0);
  rng.fill_uniform(dyn.bias.row, -0.3, 0.3);

  TensorD x = oracle::random_tensor<double>({1, H, W, C}, rng);
  TensorD want = spatial_bias_add(conv2d(x, dyn.basis.banks.reshaped({3, 3, C, Cout})), dyn.bias);
  CHECK(max_abs_diff(dynamic_lrlc_forward(x, dyn), want) <= 1e-12);
}

TEST_CASE("per-example materialized banks differ across inputs; fixed banks do not") {
  Rng rng(23);
  const std::size_t H = 4, W = 4, C = 2, Cout = 2, K = 2;
  DynamicLrlcLayer<double> dyn = make_dynamic_lrlc<double>(H, W, 3, 3, C, Cout, K, tiny_shape(), rng);
  rng.fill_uniform(dyn.net.head_filters, -3.0, 3.0);
  rng.fill_uniform(dyn.net.head_bias, -1.0, 1.0);

  TensorD batch = oracle::random_tensor<double>({2, H, W, C}, rng);
  TensorD w = dynamic_weight_map(dyn, batch);  // [2, H, W, K]

  // per-example normalization: nonnegative, sums to 1 at every position
  for (std::size_t g = 0; g < w.size() / K; ++g) {
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) {
      CHECK(w[g * K + k] >= 0.0);
      s += w[g * K + k];
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }

  // materialize per-example banks: F(n, p) = sum_k w[n,p,k] * F_k
  const std::size_t bank = dyn.basis.bank_size();
  auto materialize = [&](std::size_t n) {
    TensorD banks({H * W, bank});
    for (std::size_t p = 0; p < H * W; ++p)
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = w[(n * H * W + p) * K + k];
        for (std::size_t e = 0; e < bank; ++e)
          banks(p, e) += wv * dyn.basis.banks[k * bank + e];
      }
    return banks;
  };
  TensorD banks0 = materialize(0), banks1 = materialize(1);
  CHECK(max_abs_diff(banks0, banks1) > 1e-6);  // input-dependent

  // fixed lrlc banks are input independent by construction
  LrlcLayer<double> fixed = make_lrlc<double>(H, W, 3, 3, C, Cout, K, rng);
  LoweredLrlc<double> low = lower_to_local(fixed);
  LoweredLrlc<double> low_again = lower_to_local(fixed);
  CHECK(max_abs_diff(low.local.filters, low_again.local.filters) == 0.0);
}

TEST_CASE("end-to-end gradient check through g, basis and biases") {
  const DynamicNetShape shape = tiny_shape();
  Rng rng(29);
  const std::size_t H = 5, W = 5, C = 2, Cout = 2, K = 2;
  DynamicLrlcLayer<double> proto = make_dynamic_lrlc<double>(H, W, 3, 3, C, Cout, K, shape, rng);
  rng.fill_uniform(proto.net.head_filters, -0.8, 0.8);
  rng.fill_uniform(proto.net.head_bias, -0.3, 0.3);
  // keep hidden relu pre-activations away from their kinks: a bias step of
  // ~1e-5 must not flip any unit, or central differences go bad
  rng.fill_uniform(proto.net.bottleneck_bias, 0.05, 0.4);
  rng.fill_uniform(proto.net.expansion_bias, 0.05, 0.4);
  rng.fill_uniform(proto.bias.row, -0.3, 0.3);
  rng.fill_uniform(proto.bias.col, -0.3, 0.3);
  rng.fill_uniform(proto.bias.channel, -0.3, 0.3);

  std::vector<TensorD> inputs;
  inputs.push_back(oracle::random_tensor<double>({1, H, W, C}, rng));

  DynamicNetCache<double> probe_cache;
  predict_logits(proto.net, inputs[0], &probe_cache);
  double min_pre = 1e9;
  for (double v : probe_cache.bottleneck_pre.values()) min_pre = std::min(min_pre, std::abs(v));
  for (double v : probe_cache.expansion_pre.values()) min_pre = std::min(min_pre, std::abs(v));
  REQUIRE(min_pre > 1e-3);  // fixture stays valid if seeds change

  for (TensorD& t : net_param_vector(proto)) inputs.push_back(std::move(t));

  auto fwd = [shape](const std::vector<TensorD>& in) {
    DynamicLrlcLayer<double> layer = layer_from_params(shape, in, 1);
    return dynamic_lrlc_forward(in[0], layer);
  };
  auto bwd = [shape](const std::vector<TensorD>& in, const TensorD& dout) {
    DynamicLrlcLayer<double> layer = layer_from_params(shape, in, 1);
    DynamicLrlcCache<double> cache;
    dynamic_lrlc_forward(in[0], layer, &cache);
    DynamicLrlcGrads<double> g = dynamic_lrlc_backward(in[0], layer, cache, dout);
    return std::vector<TensorD>{g.input,
                                g.banks,
                                g.net.proj_filters,
                                g.net.proj_bias,
                                g.net.branch_filters[0],
                                g.net.branch_bias[0],
                                g.net.branch_filters[1],
                                g.net.branch_bias[1],
                                g.net.bottleneck_filters,
                                g.net.bottleneck_bias,
                                g.net.expansion_filters,
                                g.net.expansion_bias,
                                g.net.head_filters,
                                g.net.head_bias,
                                g.bias.row,
                                g.bias.col,
                                g.bias.channel};
  };
  auto rep = oracle::check_tensor_op("dynamic_lrlc", fwd, bwd, inputs, 1e-5);
  INFO("max_rel=", rep.max_rel_err, " max_abs=", rep.max_abs_err);
  CHECK(rep.pass);
}

TEST_CASE("translation covariance of interior weight maps (pool-free branches)") {
  Rng rng(31);
  const std::size_t H = 12, W = 12;
  DynamicNetShape shape;
  shape.projection = 3;
  shape.bottleneck = 2;
  shape.expansion = 4;
  shape.branches = {{1, 1}, {1, 2}};  // translation-commuting in the interior
  DynamicLrlcLayer<double> layer = make_dynamic_lrlc<double>(H, W, 3, 3, 1, 2, 2, shape, rng);
  rng.fill_uniform(layer.net.head_filters, -1.5, 1.5);
  rng.fill_uniform(layer.net.head_bias, -0.5, 0.5);

  // Crop two windows of one master pattern, offset by (di, dj).
  const std::size_t di = 2, dj = 3;
  TensorD master = oracle::random_tensor<double>({1, 24, 24, 1}, rng);
  auto crop = [&](std::size_t oi, std::size_t oj) {
    TensorD out({1, H, W, 1});
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j)
        out(std::size_t{0}, i, j, std::size_t{0}) =
            master(std::size_t{0}, oi + i, oj + j, std::size_t{0});
    return out;
  };
  TensorD a = crop(6, 6);
  TensorD b = crop(6 - di, 6 - dj);  // b(i, j) == a(i - di, j - dj)

  TensorD wa = dynamic_weight_map(layer, a);
  TensorD wb = dynamic_weight_map(layer, b);

  const std::size_t r = 2;  // receptive-field radius (max dilation)
  for (std::size_t i = di + r; i < H - r; ++i)
    for (std::size_t j = dj + r; j < W - r; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        CHECK(wb(std::size_t{0}, i, j, k) ==
              doctest::Approx(wa(std::size_t{0}, i - di, j - dj, k)).epsilon(1e-12));
}

TEST_CASE("dynamic MAC count exceeds lowered inference and grows with K") {
  LayerCostSpec spec;
  spec.kind = LayerKind::kDynamicLrlc;
  spec.height = spec.width = 16;
  spec.in_channels = spec.out_channels = 8;
  std::size_t prev = 0;
  for (std::size_t K = 1; K <= 4; ++K) {
    spec.rank = K;
    const std::size_t macs = count_flops(spec, CostMode::kDynamic).macs;
    LayerCostSpec lrlc_spec = spec;
    lrlc_spec.kind = LayerKind::kLrlc;
    CHECK(macs > count_flops(lrlc_spec, CostMode::kLoweredInference).macs);
    CHECK(macs > prev);
    prev = macs;
  }
}
