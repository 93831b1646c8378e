// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include "lmic/experiment.hpp"

using namespace lmic;

namespace {

std::vector<ReceivedSample> samples(std::size_t n) {
  Rng rng(7);
  const auto c = default_constellation();
  auto task = generate_task(rng, n, 1, c, ImbalanceConfig{});
  return task.demos;
}

std::vector<Features> features(const std::vector<ReceivedSample>& s) {
  std::vector<Features> out;
  for (const auto& x : s) out.push_back(features_of(x));
  return out;
}

std::vector<Label> labels(const std::vector<ReceivedSample>& s) {
  std::vector<Label> out;
  for (const auto& x : s) out.push_back(x.y);
  return out;
}

void BM_forward_batch(benchmark::State& state) {
  const auto model = build_mlp(4, 1);
  const auto in = features(samples(static_cast<std::size_t>(state.range(0))));
  std::vector<double> out(in.size() * 8);
  for (auto _ : state) {
    forward_batch(model, in, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_forward_batch_serial(benchmark::State& state) {
  const auto model = build_mlp(4, 1);
  const auto in = features(samples(static_cast<std::size_t>(state.range(0))));
  std::vector<double> out(in.size() * 8);
  for (auto _ : state) {
    forward_batch_serial(model, in, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_gradient(benchmark::State& state) {
  const auto model = build_mlp(7, 1);
  const auto s = samples(static_cast<std::size_t>(state.range(0)));
  const auto in = features(s);
  const auto y = labels(s);
  std::vector<double> grad(model.params().size());
  GradientScratch scratch;
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(model, in, y, grad, scratch));
}

void BM_gradient_serial(benchmark::State& state) {
  const auto model = build_mlp(7, 1);
  const auto s = samples(static_cast<std::size_t>(state.range(0)));
  const auto in = features(s);
  const auto y = labels(s);
  std::vector<double> grad(model.params().size());
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient_serial(model, in, y, grad));
}

ExperimentContext grid_context() {
  ExperimentConfig cfg;
  cfg.shots = {8, 32};
  cfg.seeds = {0, 1};
  cfg.train.epochs = 200;
  return make_context(cfg);
}

void BM_grid(benchmark::State& state) {
  const auto ctx = grid_context();
  for (auto _ : state) benchmark::DoNotOptimize(run_grid(ctx).records.size());
}

void BM_grid_serial(benchmark::State& state) {
  const auto ctx = grid_context();
  for (auto _ : state) benchmark::DoNotOptimize(run_grid_serial(ctx).records.size());
}

}  // namespace

BENCHMARK(BM_forward_batch)->Arg(32)->Arg(1024)->Arg(16384);
BENCHMARK(BM_forward_batch_serial)->Arg(32)->Arg(1024)->Arg(16384);
BENCHMARK(BM_gradient)->Arg(32)->Arg(1024);
BENCHMARK(BM_gradient_serial)->Arg(32)->Arg(1024);
BENCHMARK(BM_grid)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_grid_serial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
