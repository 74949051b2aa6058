#include <benchmark/benchmark.h>

#include <memory>

#include "l2s/bridge.hpp"
#include "l2s/checkpoint.hpp"
#include "l2s/decode.hpp"
#include "l2s/model.hpp"

using namespace l2s;

namespace {

ModelConfig decoder_cfg(int d, int layers) {
  ModelConfig cfg;
  cfg.arch = Arch::decoder_only;
  cfg.d_model = d;
  cfg.n_layers = layers;
  cfg.n_heads = 4;
  cfg.d_ff = 4 * d;
  cfg.vocab_size = 259;
  cfg.max_seq_len = 512;
  return cfg;
}

}  // namespace

static void BM_DecoderStep(benchmark::State& state) {
  const Checkpoint model = init_checkpoint(decoder_cfg(static_cast<int>(state.range(0)), 2), "slm", 5);
  for (auto _ : state) {
    state.PauseTiming();
    KvCache cache = KvCache::for_model(model.config);
    decoder_step(model, cache, 10);
    state.ResumeTiming();
    for (int i = 0; i < 32; ++i) benchmark::DoNotOptimize(decoder_step(model, cache, 11));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_DecoderStep)->Arg(32)->Arg(64)->Arg(128);

static void BM_EncoderPrefill(benchmark::State& state) {
  ModelConfig cfg = decoder_cfg(static_cast<int>(state.range(0)), 2);
  cfg.arch = Arch::encoder_only;
  const Checkpoint model = init_checkpoint(cfg, "llm", 6);
  std::vector<int> tokens(100, 42);
  for (auto _ : state) benchmark::DoNotOptimize(encoder_forward(model, tokens));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_EncoderPrefill)->Arg(64)->Arg(128);

static void BM_ProjectPrompt(benchmark::State& state) {
  const Checkpoint bridge = init_bridge(128, 64, 7);
  Rng rng(1);
  const TensorF h = TensorF::randn({100, 128}, rng, 1.0f);
  for (auto _ : state) benchmark::DoNotOptimize(project(bridge, h));
}
BENCHMARK(BM_ProjectPrompt);
