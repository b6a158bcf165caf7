// Microbenchmarks for the hot paths of the engine: masked forward/backward
// passes, top-k mask extraction, packed-mask set algebra, and the
// straight-through score gradient. Build with -DEXSSNET_BUILD_BENCHMARKS=ON
// (default when google-benchmark is installed) and run benchmarks/core_bench.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <utility>
#include <vector>

#include "exssnet/masking.hpp"
#include "exssnet/matrix.hpp"
#include "exssnet/network.hpp"
#include "exssnet/rng.hpp"

namespace {

using namespace exssnet;

constexpr int kBatch = 32;

std::vector<LayerSpec> mlp_specs() {
  return {{784, 300, Activation::kRelu},
          {300, 100, Activation::kRelu},
          {100, 10, Activation::kIdentity}};
}

Matrix random_batch(int rows, int cols, std::uint64_t seed) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (float& v : m.values()) v = rng.next_float_open01();
  return m;
}

Supermask mask_at_density(const ModelState& model, double density,
                          std::uint64_t seed) {
  Rng rng(seed);
  return threshold_topk(random_scores(model.weight_shapes(), rng), density);
}

// Forward pass through the subnetwork; density in permille via Arg.
void BM_ForwardMasked(benchmark::State& state) {
  const ModelState model = init_signed_kaiming(mlp_specs(), 1);
  const double density = static_cast<double>(state.range(0)) / 1000.0;
  const Supermask mask = mask_at_density(model, density, 2);
  const Matrix batch = random_batch(kBatch, model.input_width(), 3);

  for (auto _ : state) {
    Matrix logits = forward_masked(model, mask, batch);
    benchmark::DoNotOptimize(logits.values().data());
  }
  state.SetItemsProcessed(state.iterations() * kBatch);
}
BENCHMARK(BM_ForwardMasked)->Arg(20)->Arg(50)->Arg(100)->Arg(1000);

// Full backward pass (weight gradients restricted to the mask).
void BM_BackwardMasked(benchmark::State& state) {
  const ModelState model = init_signed_kaiming(mlp_specs(), 1);
  const Supermask mask = mask_at_density(model, 0.1, 2);
  const Matrix batch = random_batch(kBatch, model.input_width(), 3);
  const Matrix logit_grad = random_batch(kBatch, model.output_width(), 4);

  ActivationCache cache;
  forward_masked(model, mask, batch, &cache);
  for (auto _ : state) {
    BackwardResult result = backward_masked(model, mask, cache, logit_grad);
    benchmark::DoNotOptimize(result.weight_grads.data());
  }
  state.SetItemsProcessed(state.iterations() * kBatch);
}
BENCHMARK(BM_BackwardMasked);

// Per-layer top-k selection over fresh scores.
void BM_ThresholdTopk(benchmark::State& state) {
  const ModelState model = init_signed_kaiming(mlp_specs(), 1);
  Rng rng(5);
  const ScoreTensor scores = random_scores(model.weight_shapes(), rng);
  const double density = static_cast<double>(state.range(0)) / 1000.0;

  for (auto _ : state) {
    Supermask mask = threshold_topk(scores, density);
    benchmark::DoNotOptimize(mask.layers.data());
  }
}
BENCHMARK(BM_ThresholdTopk)->Arg(20)->Arg(100)->Arg(500);

// Exclusive-mask extraction against a growing pile of earlier tasks.
void BM_FreeMask(benchmark::State& state) {
  const ModelState model = init_signed_kaiming(mlp_specs(), 1);
  const int previous_count = static_cast<int>(state.range(0));
  std::vector<Supermask> previous;
  for (int i = 0; i < previous_count; ++i) {
    previous.push_back(mask_at_density(model, 0.1, 10 + i));
  }
  std::vector<const Supermask*> views;
  for (const auto& m : previous) views.push_back(&m);
  const Supermask current = mask_at_density(model, 0.1, 99);

  for (auto _ : state) {
    Supermask free = free_mask(current, views);
    benchmark::DoNotOptimize(free.layers.data());
  }
}
BENCHMARK(BM_FreeMask)->Arg(1)->Arg(4)->Arg(16);

// Packed popcount over all layers.
void BM_MaskPopcount(benchmark::State& state) {
  const ModelState model = init_signed_kaiming(mlp_specs(), 1);
  const Supermask mask = mask_at_density(model, 0.5, 7);

  for (auto _ : state) {
    benchmark::DoNotOptimize(mask.popcount());
  }
}
BENCHMARK(BM_MaskPopcount);

// Batched straight-through score gradient for the widest layer.
void BM_SteScoreGradient(benchmark::State& state) {
  const Matrix pre_grads = random_batch(kBatch, 300, 1);
  const Matrix weights = random_batch(300, 784, 2);
  const Matrix src_acts = random_batch(kBatch, 784, 3);

  for (auto _ : state) {
    Matrix grads = ste_score_gradient(pre_grads, weights, src_acts);
    benchmark::DoNotOptimize(grads.values().data());
  }
}
BENCHMARK(BM_SteScoreGradient);

}  // namespace

BENCHMARK_MAIN();
