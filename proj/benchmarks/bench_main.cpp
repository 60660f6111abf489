#include <benchmark/benchmark.h>

#include <cmath>

#include "dualmask/augment.hpp"
#include "dualmask/predictor.hpp"
#include "dualmask/sampler.hpp"
#include "dualmask/trainer.hpp"

namespace dualmask {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

TokenSeq random_tokens(std::size_t n, int hi, std::uint64_t seed) {
  Rng rng(seed);
  TokenSeq s(n);
  for (auto& x : s) x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi)));
  return s;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Attention(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Tensor qkv = random_tensor({t, 3 * 128}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(attention(qkv, 4, t, AttentionKind::bidirectional).data().data());
}
BENCHMARK(BM_Attention)->Arg(66)->Arg(258);

// Desk-default predictor, one song.
void BM_Forward(benchmark::State& state) {
  const Predictor model(PredictorConfig{});
  const auto t = static_cast<std::size_t>(state.range(0));
  const TokenSeq v = random_tokens(t, 16, 4), a = random_tokens(t, 65, 5);
  const Example ex[] = {{v, a, model.null_prefix()}};
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(model.encode(ex)).logits.data().data());
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

// One optimizer step of the desk stage-1 recipe (batch 16, 64 tokens).
void BM_TrainStep(benchmark::State& state) {
  Predictor model(PredictorConfig{});
  Trainer trainer(model, TrainConfig{});
  const StageSpec stage{1, 64, 1000, {3e-3, 50, 1000}, false, 256};
  std::int64_t step = 0;
  for (auto _ : state) {
    state.PauseTiming();
    const auto items = draw_batch(SynthConfig{}, stage, 16, 16, 1, step++);
    state.ResumeTiming();
    benchmark::DoNotOptimize(trainer.train_step(items, stage.lr).loss.total);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Iterations(5);

// Full reverse process for one 256-token song.
void BM_Generate(benchmark::State& state) {
  const Predictor model(PredictorConfig{});
  PredictorLogitModel lm(model);
  SamplerParams p;
  p.steps = static_cast<int>(state.range(0));
  const TokenSeq v = random_tokens(256, 16, 6);
  for (auto _ : state) benchmark::DoNotOptimize(generate(v, Condition::none(), lm, p).data());
  state.counters["calls_per_token"] = static_cast<double>(p.steps) / 256.0;
}
BENCHMARK(BM_Generate)->Arg(1)->Arg(20)->Unit(benchmark::kMillisecond);

void BM_FilterChain(benchmark::State& state) {
  AudioBuffer buf;
  Rng rng(7);
  for (int i = 0; i < 48000; ++i) buf.samples.push_back(0.3 * normal(rng));
  const AugParams params = sample_aug_params(rng);
  for (auto _ : state) benchmark::DoNotOptimize(apply_filter_chain(buf, params).samples.data());
  state.SetItemsProcessed(state.iterations() * 48000);
}
BENCHMARK(BM_FilterChain);

}  // namespace
}  // namespace dualmask

BENCHMARK_MAIN();
