#include <benchmark/benchmark.h>

#include <random>

#include "cfprune/allocation.hpp"
#include "cfprune/local_prune.hpp"
#include "cfprune/model.hpp"
#include "cfprune/rng.hpp"
#include "cfprune/zo_grad.hpp"

using namespace cfprune;

namespace {

ModelGraph mlp(std::size_t width, std::size_t depth, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(width)));
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < depth; ++i) {
    LayerSpec l;
    l.name = "L" + std::to_string(i);
    l.activation = i + 1 < depth ? Activation::kRelu : Activation::kIdentity;
    std::vector<double> w(width * width);
    for (auto& v : w) v = n(gen);
    l.weight = Tensor({width, width}, std::move(w));
    blocks.push_back({"b" + std::to_string(i), {std::move(l)}});
  }
  return ModelGraph(std::move(blocks), LossKind::kMse);
}

CalibrationSet batch(std::size_t k, std::size_t width, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n;
  CalibrationSet set;
  for (std::size_t s = 0; s < k; ++s) {
    std::vector<double> x(width), y(width);
    for (auto& v : x) v = n(gen);
    for (auto& v : y) v = n(gen);
    set.samples.push_back({Tensor({1, width}, std::move(x)), Tensor({1, width}, std::move(y))});
  }
  return set;
}

void BM_Forward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto model = mlp(width, 4, 1);
  const auto b = batch(32, width, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward_loss(model, b));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128);

void BM_ZoAllScores(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  auto model = mlp(width, 4, 1);
  const auto b = batch(32, width, 2);
  for (auto _ : state) benchmark::DoNotOptimize(zo_all_scores(model, b, ZoConfig{1e-3, 1, 0}));
}
BENCHMARK(BM_ZoAllScores)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Allocation(benchmark::State& state) {
  const auto model = mlp(16, static_cast<std::size_t>(state.range(0)), 3);
  ScoreMap s;
  Rng rng(4);
  for (const auto& l : model.layers()) s.entries.push_back({l.name, rng.uniform() + 0.01});
  for (auto _ : state) benchmark::DoNotOptimize(allocate_sparsity(s, model, 0.5, 0.6, Granularity::kLayer));
}
BENCHMARK(BM_Allocation)->Arg(8)->Arg(64);

void BM_SparseGptLayer(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto model = mlp(width, 1, 5);
  const auto b = batch(4 * width, width, 6);
  const Matrix x = encode_batch(model, b);
  const auto keep = model.layer(0).numel() / 2;
  for (auto _ : state) benchmark::DoNotOptimize(sparsegpt_prune_layer(model.layer(0), x, keep));
}
BENCHMARK(BM_SparseGptLayer)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_WandaLayer(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const auto model = mlp(width, 1, 5);
  const auto b = batch(4 * width, width, 6);
  const Matrix x = encode_batch(model, b);
  const auto keep = model.layer(0).numel() / 2;
  for (auto _ : state) benchmark::DoNotOptimize(wanda_prune_layer(model.layer(0), x, keep));
}
BENCHMARK(BM_WandaLayer)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
