#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "l2s/decode.hpp"

namespace l2s {

struct BenchRecord {
  std::string config_id;
  int64_t m = 0;
  int64_t n = 0;
  double ms_per_token = 0.0;
  double total_ms = 0.0;
  int64_t flops_total = 0;
  double flops_per_token = 0.0;
  int64_t reps = 0;
  int64_t timestamp = 0;   // unix seconds
  bool cv_warn = false;    // coefficient of variation across reps > 20%
};

// Deterministic m-token prompt drawn from the shared lowercase alphabet.
std::string synthetic_prompt(int64_t m, uint64_t seed);

// Greedy generation of exactly n tokens (EOS suppressed so the count is
// exact), single-threaded, timed over `reps` runs after `warmup` discarded
// runs; the median run is reported. flops come from the instrumented
// counter over one run.
BenchRecord measure(const ModelRef& ref, const std::string& config_id, int64_t m = 100,
                    int64_t n = 100, int reps = 5, int warmup = 2, uint64_t prompt_seed = 0);

// One record per (model, n) pair at fixed m.
std::vector<BenchRecord> sweep(const std::vector<std::pair<std::string, ModelRef>>& models,
                               const std::vector<int64_t>& n_values, int64_t m, int reps = 5,
                               int warmup = 2, uint64_t prompt_seed = 0);

// Median wall time of the frozen prompt encoding plus projection alone.
double measure_prompt_encoding_ms(const HybridBundle& bundle, int64_t m, int reps = 5,
                                  uint64_t prompt_seed = 0);

// One timed greedy run of exactly n tokens (EOS suppressed); building block
// for paired comparisons where several configurations are timed per round.
double time_generation_ms(const ModelRef& ref, const std::string& prompt, int64_t n);

// Closed-form weight-FLOPs for one generation with the referenced model.
int64_t model_ref_flops(const ModelRef& ref, int64_t m, int64_t n);

// Columns in BenchRecord order: config_id,m,n,ms_per_token,total_ms,
// flops_total,flops_per_token,reps,timestamp,cv_warn.
void save_bench_csv(const std::vector<BenchRecord>& records, const std::string& path);

}  // namespace l2s
