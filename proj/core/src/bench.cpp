#include "l2s/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>

#include "l2s/error.hpp"
#include "l2s/model.hpp"
#include "l2s/rng.hpp"

namespace l2s {

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

// Greedy decode of exactly n tokens with the EOS logit masked.
void run_forced(const ModelRef& ref, const std::string& prompt, int64_t n) {
  auto session = make_session(ref, prompt);
  std::vector<float> logits = session->prefill();
  const int eos = ref.eos_id();
  for (int64_t i = 0; i < n; ++i) {
    logits[static_cast<size_t>(eos)] = -std::numeric_limits<float>::infinity();
    const int token =
        static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (i + 1 < n) logits = session->step(token);
  }
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const size_t k = xs.size() / 2;
  return xs.size() % 2 ? xs[k] : 0.5 * (xs[k - 1] + xs[k]);
}

}  // namespace

std::string synthetic_prompt(int64_t m, uint64_t seed) {
  Rng rng(seed ^ 0x62656e6368ULL);
  std::string s(static_cast<size_t>(m), 'a');
  for (char& c : s) c = static_cast<char>('a' + rng.next_below(26));
  return s;
}

BenchRecord measure(const ModelRef& ref, const std::string& config_id, int64_t m, int64_t n,
                    int reps, int warmup, uint64_t prompt_seed) {
  if (reps < 1) throw ContractError("measure: reps must be >= 1");
  // Timing runs are single-threaded by contract.
  setenv("L2S_THREADS", "1", 1);
  const std::string prompt = synthetic_prompt(m, prompt_seed);

  for (int i = 0; i < warmup; ++i) run_forced(ref, prompt, n);

  std::vector<double> times;
  times.reserve(static_cast<size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    const auto t0 = Clock::now();
    run_forced(ref, prompt, n);
    times.push_back(ms_between(t0, Clock::now()));
  }

  flop_counter_reset();
  run_forced(ref, prompt, n);
  const int64_t flops = flop_counter_value();

  BenchRecord rec;
  rec.config_id = config_id;
  rec.m = m;
  rec.n = n;
  rec.total_ms = median(times);
  rec.ms_per_token = rec.total_ms / static_cast<double>(n);
  rec.flops_total = flops;
  rec.flops_per_token = static_cast<double>(flops) / static_cast<double>(n);
  rec.reps = reps;
  rec.timestamp = static_cast<int64_t>(std::time(nullptr));
  double mean = 0.0;
  for (double t : times) mean += t;
  mean /= static_cast<double>(times.size());
  double var = 0.0;
  for (double t : times) var += (t - mean) * (t - mean);
  var /= static_cast<double>(times.size());
  rec.cv_warn = mean > 0.0 && std::sqrt(var) / mean > 0.20;
  return rec;
}

std::vector<BenchRecord> sweep(const std::vector<std::pair<std::string, ModelRef>>& models,
                               const std::vector<int64_t>& n_values, int64_t m, int reps,
                               int warmup, uint64_t prompt_seed) {
  std::vector<BenchRecord> out;
  for (const auto& [id, ref] : models)
    for (int64_t n : n_values) out.push_back(measure(ref, id, m, n, reps, warmup, prompt_seed));
  return out;
}

double time_generation_ms(const ModelRef& ref, const std::string& prompt, int64_t n) {
  const auto t0 = Clock::now();
  run_forced(ref, prompt, n);
  return ms_between(t0, Clock::now());
}

double measure_prompt_encoding_ms(const HybridBundle& bundle, int64_t m, int reps,
                                  uint64_t prompt_seed) {
  const std::string prompt = synthetic_prompt(m, prompt_seed);
  const BundleTokenization tok = bundle_tokenize_prompt(bundle, prompt);
  std::vector<double> times;
  for (int i = 0; i < reps + 1; ++i) {
    const auto t0 = Clock::now();
    const PromptEncoding enc = encode_prompt(bundle, tok.llm_ids);
    const TensorF z = project(*bundle.bridge, enc.states);
    (void)z;
    if (i > 0) times.push_back(ms_between(t0, Clock::now()));  // first run is warmup
  }
  return median(times);
}

int64_t model_ref_flops(const ModelRef& ref, int64_t m, int64_t n) {
  if (ref.bundle) return bundle_flops(*ref.bundle, m, n);
  return flops_generate(ref.model->config, m, n, true);
}

void save_bench_csv(const std::vector<BenchRecord>& records, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "config_id,m,n,ms_per_token,total_ms,flops_total,flops_per_token,reps,timestamp,cv_warn\n";
  char buf[256];
  for (const BenchRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.6f,%.6f,%lld,%.3f,%lld,%lld,%d\n",
                  r.config_id.c_str(), static_cast<long long>(r.m), static_cast<long long>(r.n),
                  r.ms_per_token, r.total_ms, static_cast<long long>(r.flops_total),
                  r.flops_per_token, static_cast<long long>(r.reps),
                  static_cast<long long>(r.timestamp), r.cv_warn ? 1 : 0);
    f << buf;
  }
}

}  // namespace l2s
