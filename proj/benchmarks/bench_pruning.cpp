#include <benchmark/benchmark.h>

#include <vector>

#include "circuits/connectivity.hpp"
#include "circuits/dataset.hpp"
#include "circuits/metrics.hpp"
#include "circuits/model.hpp"
#include "circuits/saliency.hpp"
#include "circuits/trainer.hpp"

namespace {

struct Fixture {
  circuits::ModelGraph model;
  std::vector<circuits::Tensor> images;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out{circuits::ModelGraph::build(circuits::toy_classifier(16)), {}};
    out.model.initialize(11);
    circuits::SyntheticDatasetSpec spec;
    spec.samples_per_class = 4;
    out.images = circuits::generate_dataset(spec).images;
    return out;
  }();
  return f;
}

const circuits::FeatureTarget kTarget = circuits::FeatureTarget::sum_abs("conv4", 0);

void BM_Score(benchmark::State& state) {
  const auto& f = fixture();
  const auto criterion = static_cast<circuits::Criterion>(state.range(0));
  for (auto _ : state) {
    switch (criterion) {
      case circuits::Criterion::actgrad:
        benchmark::DoNotOptimize(circuits::score_actgrad(f.model, kTarget, f.images));
        break;
      case circuits::Criterion::snip:
        benchmark::DoNotOptimize(circuits::score_snip(f.model, kTarget, f.images));
        break;
      default:
        benchmark::DoNotOptimize(circuits::score_magnitude(f.model, kTarget));
    }
  }
  state.SetLabel(circuits::to_string(criterion));
}
BENCHMARK(BM_Score)
    ->Arg(static_cast<int>(circuits::Criterion::actgrad))
    ->Arg(static_cast<int>(circuits::Criterion::snip))
    ->Arg(static_cast<int>(circuits::Criterion::magnitude))
    ->Unit(benchmark::kMillisecond);

void BM_Force(benchmark::State& state) {
  const auto& f = fixture();
  const std::size_t m = circuits::relevant_kernel_indices(f.model, kTarget).size();
  const std::size_t kappa = circuits::kappa_for(0.1, m);
  for (auto _ : state) benchmark::DoNotOptimize(circuits::score_force(f.model, kTarget, f.images, kappa, 10));
}
BENCHMARK(BM_Force)->Unit(benchmark::kMillisecond);

void BM_Sweep(benchmark::State& state) {
  const auto& f = fixture();
  const std::vector<double> levels = circuits::parse_sparsity_list("1:0.01:log9");
  circuits::SweepOptions opt;
  for (auto _ : state) benchmark::DoNotOptimize(circuits::sparsity_sweep(f.model, kTarget, opt, levels, f.images));
}
BENCHMARK(BM_Sweep)->Unit(benchmark::kMillisecond);

}  // namespace
