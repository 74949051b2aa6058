#pragma once

#include <cstdint>
#include <vector>

#include "l2s/checkpoint.hpp"

namespace l2s {

// Process-wide counter over weight matmuls in the plain inference path
// (projections, MLPs, heads, projector). Matches the closed forms in
// flops_generate / bundle_flops exactly.
void flop_counter_reset();
int64_t flop_counter_value();

// x times a parameter matrix, counted toward the instrumented FLOPs total.
TensorF matmul_counted(const TensorF& x, const TensorF& w);

// Per-generation mutable state. K/V rows are stored per layer as
// (position, d_model) matrices, i.e. (filled_len, heads, head_dim) in memory.
// Rows are append-only during generation; truncate() exists solely so
// speculative decoding can discard rejected draft rows.
struct KvCache {
  int64_t filled = 0;
  int64_t capacity = 0;
  std::vector<TensorF> k, v;
  std::vector<TensorF> cross_k, cross_v;
  int64_t cross_len = 0;

  static KvCache for_model(const ModelConfig& cfg);
  void truncate(int64_t len);
};

// Bidirectional encoder over token ids; m x d last-layer states with the
// final norm applied. Deterministic, independent of anything but the input.
TensorF encoder_forward(const Checkpoint& ckpt, const std::vector<int>& tokens);

// Same stack over caller-provided input rows (fused embeddings).
TensorF encoder_forward_rows(const Checkpoint& ckpt, const TensorF& rows);

// Hidden states of a decoder-only model after the first `layers` blocks,
// causal attention, no final norm. layers == 0 returns the embedding plus
// position rows unchanged.
TensorF decoder_hidden_prefix(const Checkpoint& ckpt, const std::vector<int>& tokens, int layers);

// Embedded input row for a decoder stream: tok_emb[token] + pos_emb[position].
void embed_token_row(const Checkpoint& ckpt, int token, int64_t position, float* out);

// Precompute per-layer cross-attention K/V from encoder output.
void init_cross_cache(const Checkpoint& ckpt, const TensorF& enc_out, KvCache& cache);

// Runs a block of embedded rows (absolute positions cache.filled ...) through
// the decoder stack, appending K/V; returns the block's hidden states, pre
// final norm. Keys below min_attend_pos are masked out (test hook for
// conditioning-locality checks).
TensorF decoder_append_rows(const Checkpoint& ckpt, KvCache& cache, const TensorF& rows,
                            int64_t min_attend_pos = 0);

// Final norm + output head over one hidden row.
std::vector<float> head_logits(const Checkpoint& ckpt, const float* hidden);

// One incremental decode step: embed `token` at the next position, run the
// stack, return next-token logits. Cross-attention state is initialized from
// `cross` on the first call for encoder-decoder models; passing `cross` to a
// decoder-only model is a contract error.
std::vector<float> decoder_step(const Checkpoint& ckpt, KvCache& cache, int token,
                                const TensorF* cross = nullptr);

}  // namespace l2s
