#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "l2s/config.hpp"
#include "l2s/rng.hpp"
#include "l2s/tensor.hpp"

namespace l2s {

struct TensorSpec {
  std::string name;
  std::vector<int64_t> shape;
};

// Named-tensor schema implied by a config. Init, validation, truncation and
// the file format all iterate this one list, so tensor order is stable.
std::vector<TensorSpec> tensor_schema(const ModelConfig& cfg);

// A model's full parameter set plus metadata. Tensor order follows
// tensor_schema; lookups are by name.
struct Checkpoint {
  ModelConfig config;
  std::string role = "slm";   // "llm" | "slm" | "bridge"
  std::string vocab_kind = "byte_full";
  int64_t step = 0;
  std::vector<std::pair<std::string, TensorF>> tensors;

  const TensorF& tensor(const std::string& name) const;
  TensorF& tensor(const std::string& name);
  bool has_tensor(const std::string& name) const;

  // Shape check against the schema (model roles only; bridge checkpoints
  // carry their own tensor set and are validated by the bridge module).
  void validate() const;
};

// Weights ~ N(0, 0.02), biases and norm offsets zero, norm gains one.
Checkpoint init_checkpoint(const ModelConfig& cfg, const std::string& role, uint64_t seed,
                           const std::string& vocab_kind = "byte_full");

// Keeps the lowest kept_layers blocks of each stack plus embeddings, final
// norms and head; layer tensors are bit-copied, never recomputed.
Checkpoint truncate_layers(const Checkpoint& ckpt, int kept_layers);

// Parameter count; the embeddings flag also controls the output head, to
// match the usual "excluding embedding and head parameters" convention.
int64_t param_count(const ModelConfig& cfg, bool with_embeddings = false);

// Bitwise equality of config and every named tensor.
bool weights_equal(const Checkpoint& a, const Checkpoint& b);

// --- binary checkpoint file ---
// magic "L2S1", u32 LE header length, UTF-8 JSON header
// {config, role, vocab, step, tensors:[{name, shape, offset}]},
// then contiguous little-endian float32 payload. Byte-exact round trip.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// --- decode/prefill cost model (weight matmuls only) ---
// Counts 2*p*q*r over every multiplication against a parameter matrix:
// attention input/output projections, MLP layers and the output head.
// Activation-activation products inside attention are excluded so the
// per-token decode cost is independent of context length; the runtime
// instrumentation counts the same set, making closed form and measured
// counter agree exactly.
int64_t flops_per_decode_token(const ModelConfig& cfg);
int64_t flops_prefill(const ModelConfig& cfg, int64_t m);
int64_t flops_generate(const ModelConfig& cfg, int64_t m, int64_t n, bool cached = true);

}  // namespace l2s
