// Serial reference kernels against their OpenMP counterparts.
#include "alignedcut/kernels.hpp"
#include "alignedcut/rng.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

using namespace alignedcut;

namespace {

RowMatrixXd gaussian(long rows, long cols, std::uint64_t seed) {
    SplitMix64 rng(seed);
    RowMatrixXd m(rows, cols);
    for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

void set_threads(benchmark::State& state) { omp_set_num_threads(static_cast<int>(state.range(1))); }

void BM_AffinitySerial(benchmark::State& state) {
    const RowMatrixXd x = gaussian(state.range(0), 64, 1);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::affinity(x));
}

void BM_AffinityOmp(benchmark::State& state) {
    set_threads(state);
    const RowMatrixXd x = gaussian(state.range(0), 64, 1);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::omp::affinity(x));
}

void BM_PropagateSerial(benchmark::State& state) {
    const RowMatrixXd full = gaussian(state.range(0), 64, 2);
    const RowMatrixXd sub = full.topRows(500);
    const RowMatrixXd values = gaussian(500, 20, 3);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::knn_propagate(full, sub, values, 50));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PropagateOmp(benchmark::State& state) {
    set_threads(state);
    const RowMatrixXd full = gaussian(state.range(0), 64, 2);
    const RowMatrixXd sub = full.topRows(500);
    const RowMatrixXd values = gaussian(500, 20, 3);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::omp::knn_propagate(full, sub, values, 50));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_TsneGradientSerial(benchmark::State& state) {
    const auto n = state.range(0);
    RowMatrixXd p = gaussian(n, n, 4).cwiseAbs();
    p /= p.sum();
    const RowMatrixXd y = gaussian(n, 3, 5);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::tsne_gradient(p, y, 1.0));
}

void BM_TsneGradientOmp(benchmark::State& state) {
    set_threads(state);
    const auto n = state.range(0);
    RowMatrixXd p = gaussian(n, n, 4).cwiseAbs();
    p /= p.sum();
    const RowMatrixXd y = gaussian(n, 3, 5);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::omp::tsne_gradient(p, y, 1.0));
}

void BM_NearestCenterSerial(benchmark::State& state) {
    const RowMatrixXd x = gaussian(state.range(0), 20, 6);
    const RowMatrixXd c = gaussian(21, 20, 7);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::nearest_center(x, c, nullptr));
}

void BM_NearestCenterOmp(benchmark::State& state) {
    set_threads(state);
    const RowMatrixXd x = gaussian(state.range(0), 20, 6);
    const RowMatrixXd c = gaussian(21, 20, 7);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::omp::nearest_center(x, c, nullptr));
}

}  // namespace

BENCHMARK(BM_AffinitySerial)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AffinityOmp)->ArgsProduct({{256, 1024}, {1, 2, 4}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PropagateSerial)->Arg(5000)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PropagateOmp)->ArgsProduct({{5000, 20000}, {1, 2, 4}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TsneGradientSerial)->Arg(500)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TsneGradientOmp)->ArgsProduct({{500, 1000}, {1, 2, 4}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NearestCenterSerial)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NearestCenterOmp)->ArgsProduct({{100000}, {1, 2, 4}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
