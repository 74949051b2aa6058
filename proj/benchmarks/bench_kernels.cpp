#include <benchmark/benchmark.h>

#include "l2s/rng.hpp"
#include "l2s/tensor.hpp"

using namespace l2s;

namespace {

TensorF random_mat(int64_t r, int64_t c, uint64_t seed) {
  Rng rng(seed);
  return TensorF::randn({r, c}, rng, 1.0f);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const int64_t d = state.range(0);
  const TensorF a = random_mat(d, d, 1);
  const TensorF b = random_mat(d, d, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * d * d * d);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_MatVec(benchmark::State& state) {
  const int64_t d = state.range(0);
  const TensorF x = random_mat(1, d, 1);
  const TensorF w = random_mat(d, d, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(x, w));
  state.SetItemsProcessed(state.iterations() * 2 * d * d);
}
BENCHMARK(BM_MatVec)->Arg(64)->Arg(128)->Arg(256);

static void BM_SoftmaxRows(benchmark::State& state) {
  const TensorF x = random_mat(state.range(0), state.range(0), 3);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(x));
}
BENCHMARK(BM_SoftmaxRows)->Arg(64)->Arg(256);

static void BM_LayerNorm(benchmark::State& state) {
  const int64_t d = state.range(0);
  const TensorF x = random_mat(100, d, 4);
  const TensorF g = TensorF::full({d}, 1.0f);
  const TensorF b = TensorF::zeros({d});
  for (auto _ : state) benchmark::DoNotOptimize(layer_norm(x, g, b, 1e-5f));
}
BENCHMARK(BM_LayerNorm)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
