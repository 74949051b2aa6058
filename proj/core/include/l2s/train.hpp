#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "l2s/bridge.hpp"
#include "l2s/checkpoint.hpp"
#include "l2s/dataset.hpp"
#include "l2s/decode.hpp"

namespace l2s {

enum class TrainMode { slm_baseline, llm2slm_full, projector_only, prompt_tuning_baseline };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& s);

struct TrainConfig {
  double lr_base = 1e-3;
  double weight_decay = 0.1;
  double warmup_frac = 0.1;
  int total_steps = 100;
  int micro_batch = 8;
  int accumulation = 16;  // effective batch = micro_batch * accumulation (128 default)
  uint64_t seed = 0;
  TrainMode mode = TrainMode::slm_baseline;
  std::string label_source = "gt";  // "gt" | "gen"; which dataset the pipeline feeds
  double clip_norm = 1.0;

  void validate() const;
};

// Linear warmup from 0 to base over warmup_frac of the run, then cosine
// decay to 0 at `total`.
double lr_at(int64_t step, int64_t total, double base, double warmup_frac = 0.1);

// Decoupled weight decay: p <- p - lr*wd*p - lr*mhat/(sqrt(vhat)+eps), both
// terms computed from the incoming parameter value.
struct AdamwConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};
void adamw_update(float* param, const float* grad, float* m, float* v, int64_t count,
                  int64_t step, double lr, double weight_decay,
                  const AdamwConstants& k = {});

struct TrainStepRecord {
  int64_t step;
  double lr;
  double loss;
};

struct TrainResult {
  std::vector<TrainStepRecord> trace;
  double final_loss = 0.0;
};

// CSV columns: step,lr,loss.
void save_loss_trace(const std::vector<TrainStepRecord>& trace, const std::string& path);

// Teacher-forced training of a plain model (every tensor trains) or of a
// bundle under its mode's trainable set:
//   llm2slm_full      - small model and bridge
//   projector_only    - bridge only
//   prompt_tuning     - the learned soft prompt only
// The large model is never bound to the tape in any mode. Loss is taken on
// target positions only; decoder-only prompt positions are excluded through
// the ignore id.
TrainResult train_model(Checkpoint& model, const Dataset& data, const TrainConfig& cfg);
TrainResult train_bundle(HybridBundle& bundle, const Dataset& data, const TrainConfig& cfg);

// Greedy by default: decoding the same prompts twice yields byte-identical
// datasets. Rows are tagged source = "gen".
Dataset generate_labels(const Checkpoint& model, const std::vector<std::string>& prompts,
                        const GenerationParams& params);

}  // namespace l2s
