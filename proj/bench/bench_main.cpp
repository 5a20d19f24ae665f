// Parallel kernels against their serial references (workers = 1). The
// argument of each benchmark is the worker count; 0 is the OpenMP default.

#include <benchmark/benchmark.h>

#include "fracdrift/mc_oracle.hpp"
#include "fracdrift/series.hpp"

using namespace fracdrift;

namespace {

const StableParams kParams{1.5, 2};
const Point kX = {1.0, 0.0};
const std::vector<Point> kY = {{0.3, 0.8}, {-1.0, 0.5}, {1.2, -0.4}};

void BM_SimulateEndpoints(benchmark::State& state) {
  MCConfig c;
  c.n_paths = 20000;
  c.h = 1.0 / 64.0;
  c.workers = static_cast<int>(state.range(0));
  const auto b = rotational_field(1.5).with_r(0.05);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_endpoints(kParams, b, kX, c));
  state.SetItemsProcessed(state.iterations() * c.n_paths * c.steps());
}
BENCHMARK(BM_SimulateEndpoints)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_KernelDensity(benchmark::State& state) {
  MCConfig c;
  c.n_paths = 200000;
  c.h = 1.0;
  const auto ep = simulate_endpoints(kParams, zero_field(2), kX, c);
  const double bw = plugin_bandwidth(ep);
  for (auto _ : state) benchmark::DoNotOptimize(kde_density(ep, kY[0], bw));
}
BENCHMARK(BM_KernelDensity)->Unit(benchmark::kMillisecond);

void BM_PicardSolve(benchmark::State& state) {
  QuadConfig q;
  q.grid = 256;
  q.workers = static_cast<int>(state.range(0));
  const auto b = rotational_field(1.5).with_r(0.07);
  duhamel_solve(kParams, b, 1.0, kX, kY, q, 3, 0.7);  // kernel tables and FFT plans
  for (auto _ : state) benchmark::DoNotOptimize(duhamel_solve(kParams, b, 1.0, kX, kY, q, 3, 0.7));
}
BENCHMARK(BM_PicardSolve)->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

void BM_DensityEval(benchmark::State& state) {
  const double x[2] = {0.7, -0.2};
  density(kParams, 1.0, x);  // build the interpolant outside the loop
  double t = 0.5;
  for (auto _ : state) {
    benchmark::DoNotOptimize(density(kParams, t, x));
    t = t < 2.0 ? t * 1.01 : 0.5;
  }
}
BENCHMARK(BM_DensityEval);

}  // namespace

BENCHMARK_MAIN();
