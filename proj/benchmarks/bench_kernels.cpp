#include <benchmark/benchmark.h>

#include "lrlc/dynamic.hpp"
#include "lrlc/exec.hpp"
#include "lrlc/gemm.hpp"
#include "lrlc/layers.hpp"
#include "lrlc/lrlc.hpp"
#include "lrlc/rng.hpp"

namespace {

using namespace lrlc;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  rng.fill_uniform(t, T{-1}, T{1});
  return t;
}

void BM_GemmNN(benchmark::State& state) {
  const std::size_t m = state.range(0), k = state.range(1), n = state.range(2);
  TensorF a = random_tensor<float>({m, k}, 1);
  TensorF b = random_tensor<float>({k, n}, 2);
  TensorF c({m, n});
  for (auto _ : state) {
    gemm_nn<float>(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(
      2.0 * double(m) * double(n) * double(k) * double(state.iterations()) * 1e-9,
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_GemmNN)->Args({12544, 576, 64})->Args({1024, 1024, 1024})->Unit(benchmark::kMillisecond);

void BM_Conv2dForward(benchmark::State& state) {
  const std::size_t batch = state.range(0), hw = state.range(1), cin = state.range(2),
                    cout = state.range(3);
  TensorF x = random_tensor<float>({batch, hw, hw, cin}, 3);
  ConvLayer<float> layer{random_tensor<float>({3, 3, cin, cout}, 4), TensorF({cout})};
  for (auto _ : state) {
    TensorF y = conv2d_forward(x, layer);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["GMAC/s"] = benchmark::Counter(
      double(batch * hw * hw * 9 * cin * cout) * double(state.iterations()) * 1e-9,
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv2dForward)->Args({128, 28, 64, 64})->Args({128, 28, 1, 64})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const std::size_t batch = state.range(0), hw = state.range(1), c = state.range(2);
  TensorF x = random_tensor<float>({batch, hw, hw, c}, 5);
  TensorF f = random_tensor<float>({3, 3, c, c}, 6);
  TensorF dy = random_tensor<float>({batch, hw, hw, c}, 7);
  for (auto _ : state) {
    ConvGrads<float> g = conv2d_backward(x, f, dy, true);
    benchmark::DoNotOptimize(g.filters.data());
  }
  state.counters["GMAC/s"] = benchmark::Counter(
      2.0 * double(batch * hw * hw * 9 * c * c) * double(state.iterations()) * 1e-9,
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Conv2dBackward)->Args({128, 28, 64})->Unit(benchmark::kMillisecond);

void BM_LrlcForward(benchmark::State& state) {
  const std::size_t K = state.range(0);
  Rng rng(8);
  LrlcLayer<float> layer = make_lrlc<float>(28, 28, 3, 3, 64, 64, K, rng);
  TensorF x = random_tensor<float>({128, 28, 28, 64}, 9);
  for (auto _ : state) {
    TensorF y = lrlc_forward(x, layer);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_LrlcForward)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_LoweredLocalForward(benchmark::State& state) {
  Rng rng(10);
  LrlcLayer<float> layer = make_lrlc<float>(28, 28, 3, 3, 64, 64, 4, rng);
  LoweredLrlc<float> lowered = lower_to_local(layer);
  TensorF x = random_tensor<float>({16, 28, 28, 64}, 11);
  for (auto _ : state) {
    TensorF y = lowered_forward(x, lowered);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_LoweredLocalForward)->Unit(benchmark::kMillisecond);

void BM_DynamicWeightNet(benchmark::State& state) {
  Rng rng(12);
  DynamicNetShape shape;
  DynamicLrlcLayer<float> layer = make_dynamic_lrlc<float>(28, 28, 3, 3, 64, 64, 4, shape, rng);
  TensorF x = random_tensor<float>({128, 28, 28, 64}, 13);
  for (auto _ : state) {
    TensorF logits = predict_logits(layer.net, x);
    benchmark::DoNotOptimize(logits.data());
  }
}
BENCHMARK(BM_DynamicWeightNet)->Unit(benchmark::kMillisecond);

void BM_BilinearResize(benchmark::State& state) {
  TensorF x = random_tensor<float>({128, 7, 7, 8}, 14);
  for (auto _ : state) {
    TensorF y = bilinear_resize(x, 28, 28);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_BilinearResize)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
