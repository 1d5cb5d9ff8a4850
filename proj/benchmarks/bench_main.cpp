#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "segdiff/bitcodec.hpp"
#include "segdiff/datagen.hpp"
#include "segdiff/diffusion.hpp"
#include "segdiff/metrics.hpp"
#include "segdiff/trainer.hpp"
#include "segdiff/unet.hpp"

using namespace segdiff;

namespace {

NetConfig bench_net(int width) {
  NetConfig cfg;
  cfg.base_width = width;
  return cfg;
}

LabelMap random_map(int side, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, classes - 1);
  LabelMap m(side, side);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = d(rng);
  return m;
}

}  // namespace

static void BM_UNetForward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  UNet<float> net(bench_net(64), 4, PredictionType::X, 1);
  Tensor<float> x(batch, 4, 32, 32, 0.1f), img(batch, 3, 32, 32, -0.2f);
  std::vector<float> t(static_cast<std::size_t>(batch), 0.5f);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x, img, t));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_UNetForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  UNet<float> net(bench_net(width), 4, PredictionType::X, 1);
  AdamW opt(net.parameters(), {});
  SceneConfig scene;
  std::vector<Sample> samples;
  for (std::uint64_t s = 0; s < 32; ++s) samples.push_back(synth_scene(s, scene));
  const Encoding enc{EncodingKind::AnalogBits, 16};
  const TrainingData data =
      prepare_training_data(samples, enc, LapMode::Similar, build_similar_grid(4));
  TrainConfig cfg;
  const NoiseSchedule sched(0.1);
  std::int64_t iter = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(net, opt, data, cfg, sched, {}, iter++));
  state.counters["params"] = static_cast<double>(net.parameter_count());
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Ari(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const LabelMap a = random_map(side, 12, 1), b = random_map(side, 12, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ari(a, b));
}
BENCHMARK(BM_Ari)->Arg(32)->Arg(128);

static void BM_HungarianIou(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const LabelMap a = random_map(side, 16, 3), b = random_map(side, 16, 4);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian_iou(a, b));
}
BENCHMARK(BM_HungarianIou)->Arg(32)->Arg(128);

static void BM_SolveAssignment(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  for (auto& v : m) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(solve_assignment(m, n, n));
}
BENCHMARK(BM_SolveAssignment)->Arg(8)->Arg(64)->Arg(256);

static void BM_ClassProbabilities(benchmark::State& state) {
  const int bits = static_cast<int>(state.range(0));
  std::vector<double> act(static_cast<std::size_t>(bits), 0.3);
  for (auto _ : state) benchmark::DoNotOptimize(class_probabilities(act));
}
BENCHMARK(BM_ClassProbabilities)->Arg(4)->Arg(8);

static void BM_SynthScene(benchmark::State& state) {
  SceneConfig scene;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(synth_scene(seed++, scene));
}
BENCHMARK(BM_SynthScene);

BENCHMARK_MAIN();
