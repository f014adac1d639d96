#include <benchmark/benchmark.h>

#include <random>

#include "circuits/hdbscan.hpp"
#include "circuits/ops.hpp"

namespace {

using circuits::Shape;
using circuits::Tensor;

Tensor noise(Shape shape, unsigned seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : t.data()) v = n(rng);
  return t;
}

void BM_ConvForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const Tensor x = noise({c, hw, hw}, 1), w = noise({c, c, 3, 3}, 2);
  const std::vector<double> b(c, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(circuits::conv2d_forward(x, w, b, {1, 1}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * hw * hw * 9));
}
BENCHMARK(BM_ConvForward)->Args({8, 16})->Args({12, 16})->Args({32, 32});

void BM_ConvBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const Tensor x = noise({c, hw, hw}, 1), w = noise({c, c, 3, 3}, 2), g = noise({c, hw, hw}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(circuits::conv2d_backward(x, w, g, {1, 1}));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * hw * hw * 9));
}
BENCHMARK(BM_ConvBackward)->Args({8, 16})->Args({12, 16})->Args({32, 32});

void BM_Hdbscan(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor pts({n, 12});
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise_d(0.0, 0.3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 12; ++d) pts.data()[i * 12 + d] = noise_d(rng) + (d == i % 4 ? 4.0 : 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(circuits::hdbscan(pts, 10));
}
BENCHMARK(BM_Hdbscan)->Arg(100)->Arg(300)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
