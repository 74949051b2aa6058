#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "l2s/checkpoint.hpp"
#include "l2s/model.hpp"
#include "l2s/tokenizer.hpp"

namespace l2s {

enum class FusionMode { add, replace };
enum class TokenizerMode { llm_shared, slm_native };

std::string fusion_name(FusionMode m);
FusionMode fusion_from_name(const std::string& s);
std::string tokenizer_mode_name(TokenizerMode m);
TokenizerMode tokenizer_mode_from_name(const std::string& s);

// One-shot prompt representation from the frozen large model.
struct PromptEncoding {
  TensorF states;            // m x d_l
  std::string source_model;  // role tag of the producing checkpoint
  int source_layer = -1;     // -1: last encoder layer; >= 0: decoder block index
};

// A frozen large model, a trainable small model and the bridge parameters
// between them. Bundles with a null llm carry only a learned soft prompt
// (the prompt-tuning baseline); bundles with an llm carry the projector and,
// for cross-family pairs under the shared tokenizer, the embedding
// projection and replacement head.
struct HybridBundle {
  std::shared_ptr<Checkpoint> llm;
  std::shared_ptr<Checkpoint> slm;
  std::shared_ptr<Checkpoint> bridge;
  FusionMode fusion = FusionMode::add;
  TokenizerMode tokenizer_mode = TokenizerMode::llm_shared;
  int extraction_layer = -1;  // encoder LLMs: -1 (last); decoder-only: 0..depth

  bool has_llm() const { return llm != nullptr; }
  bool cross_family() const;
  double size_ratio() const;  // param_count(llm) / param_count(slm)
  void validate() const;
};

// Projector (always) plus embedding projection and replacement head when
// `cross_family`; d_l is the source width, d_s the target width, v_out the
// shared output vocabulary for the replacement head.
Checkpoint init_bridge(int d_l, int d_s, uint64_t seed, bool cross_family = false, int v_out = 0);

// Learned soft-prompt bank for the prompt-tuning baseline.
Checkpoint init_soft_prompt(int prompt_len, int d_s, uint64_t seed);

int64_t bridge_param_count(const Checkpoint& bridge);

// Frozen single pass of the large model over the prompt: encoder output for
// encoder-family models, hidden states after block `extraction_layer` for
// decoder-only models (layer 0 = embedding plus position rows).
PromptEncoding encode_prompt(const HybridBundle& bundle, const std::vector<int>& llm_prompt_ids);

// Two-layer MLP with ReLU: width d_l in, d_s out, length preserved.
TensorF project(const Checkpoint& bridge, const TensorF& h);

// add: elementwise Z + E_X (shapes must agree); replace: Z, E_X ignored.
TensorF fuse(FusionMode mode, const TensorF& z, const TensorF& ex);

// Tokenization per bundle mode. llm_tokenizer_ids feeds encode_prompt;
// slm ids build E_X (identical under llm_shared).
struct BundleTokenization {
  std::vector<int> llm_ids;
  std::vector<int> slm_ids;
};
BundleTokenization bundle_tokenize_prompt(const HybridBundle& bundle, const std::string& text);

// Vocabulary the bundle emits (shared LLM vocab or the SLM's own).
Vocab bundle_output_vocab(const HybridBundle& bundle);

// Prompt-side input rows for the small model: fused projection for hybrid
// bundles, learned prefix plus embeddings for soft-prompt bundles. Positions
// are consumed starting at 0; target rows continue at rows.rows().
TensorF build_slm_prompt_rows(const HybridBundle& bundle, const BundleTokenization& tok);

// Embedded row for a decoded / target token under the bundle's alignment
// rule (embedding projection of the frozen source table for cross-family
// pairs, the small model's own table otherwise).
void bundle_embed_target_row(const HybridBundle& bundle, int token, int64_t position, float* out);

// Final norm plus output head (replacement head when present).
std::vector<float> bundle_head_logits(const HybridBundle& bundle, const float* hidden);

// Assembled forward inputs after `decoded` tokens, mirroring the incremental
// session layout: encoder-decoder small models receive fused prompt rows on
// the encoder side and BOS+decoded on the decoder side; decoder-only small
// models receive one causal stream of fused prompt rows then decoded rows.
struct SlmInputs {
  TensorF enc_rows;          // empty for decoder-only small models
  TensorF dec_rows;
  int64_t prompt_row_count;  // rows in the stream that belong to the prompt side
};
SlmInputs build_slm_inputs(const HybridBundle& bundle, const BundleTokenization& tok,
                           const std::vector<int>& decoded);

// Closed-form weight-matmul count for generating n tokens from an m-token
// prompt with the bundle; exact match with the instrumented counter.
int64_t bundle_flops(const HybridBundle& bundle, int64_t m, int64_t n);

// Manifest JSON {llm_path, slm_path, bridge_path, fusion, tokenizer_mode,
// extraction_layer}; checkpoints live in sibling files next to the manifest.
void save_bundle(const HybridBundle& bundle, const std::string& manifest_path);
HybridBundle load_bundle(const std::string& manifest_path);

}  // namespace l2s
