#include <benchmark/benchmark.h>

#include "kllab/harness.hpp"
#include "kllab/kernels.hpp"

namespace {

using namespace kllab;

SweepSpec bench_sweep() {
    SweepSpec spec;
    spec.scenario = scenario_by_name("fig2_two_mode");
    spec.objectives = {{ObjectiveKind::ReverseKL, 0.1, 0.0}, {ObjectiveKind::ForwardKL, 0.1, 0.0}};
    spec.betas = {0.05, 0.1, 0.25, 0.5};
    spec.seeds = {0, 1};
    spec.train.steps = 200;
    spec.train.mode = GradientMode::MonteCarlo;
    return spec;
}

void BM_sweep_serial(benchmark::State& state) {
    const auto spec = bench_sweep();
    for (auto _ : state) benchmark::DoNotOptimize(run_sweep_serial(spec, false));
}

void BM_sweep_parallel(benchmark::State& state) {
    const auto spec = bench_sweep();
    const int workers = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(run_sweep(spec, workers, false));
}

void BM_mc_gradient_serial(benchmark::State& state) {
    const auto s = scenario_by_name("fig2_two_mode");
    const auto policy = SoftmaxPolicy::restricted_to(s.reference);
    for (auto _ : state)
        benchmark::DoNotOptimize(average_mc_gradient_reverse_serial(policy, s, 0.1, 32, Baseline::BatchMean, 1, 20000));
}

void BM_mc_gradient_parallel(benchmark::State& state) {
    const auto s = scenario_by_name("fig2_two_mode");
    const auto policy = SoftmaxPolicy::restricted_to(s.reference);
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(
            average_mc_gradient_reverse(policy, s, 0.1, 32, Baseline::BatchMean, 1, 20000, threads));
}

}  // namespace

BENCHMARK(BM_sweep_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_sweep_parallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mc_gradient_serial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_mc_gradient_parallel)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
