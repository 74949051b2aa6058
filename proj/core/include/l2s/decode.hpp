#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "l2s/bridge.hpp"
#include "l2s/checkpoint.hpp"
#include "l2s/rng.hpp"

namespace l2s {

enum class Strategy { greedy, nucleus, beam };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& s);

struct GenerationParams {
  Strategy strategy = Strategy::greedy;
  int max_new_tokens = 64;
  int beam_width = 4;
  double length_penalty = 0.6;
  double top_p = 1.0;
  double temperature = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

// One in-flight autoregressive stream over an immutable model or bundle.
// prefill() consumes the prompt and returns logits for the first output
// token; step() feeds one token; step_block() feeds several and returns the
// logits after each (verification); rollback() discards the last fed rows.
class Session {
 public:
  virtual ~Session() = default;
  virtual std::vector<float> prefill() = 0;
  virtual std::vector<float> step(int token) = 0;
  virtual TensorF step_block(const std::vector<int>& tokens) = 0;
  virtual void rollback(int64_t count) = 0;
  virtual std::unique_ptr<Session> clone() const = 0;
  virtual int vocab_size() const = 0;
  virtual int64_t capacity_remaining() const = 0;
};

// Either a plain model or a hybrid bundle; the uniform handle the decoding,
// benchmark and CLI layers work with.
struct ModelRef {
  const Checkpoint* model = nullptr;
  const HybridBundle* bundle = nullptr;

  ModelRef() = default;
  ModelRef(const Checkpoint& m) : model(&m) {}  // NOLINT(google-explicit-constructor)
  ModelRef(const HybridBundle& b) : bundle(&b) {}  // NOLINT(google-explicit-constructor)

  Vocab vocab() const;
  int eos_id() const { return Vocab::kEos; }
};

std::unique_ptr<Session> make_model_session(const Checkpoint& model,
                                            const std::vector<int>& prompt_ids,
                                            const TensorF* enc_out = nullptr);
std::unique_ptr<Session> make_bundle_session(const HybridBundle& bundle,
                                             const BundleTokenization& tok,
                                             const TensorF* prompt_states = nullptr);
std::unique_ptr<Session> make_session(const ModelRef& ref, const std::string& prompt_text);

// GNMT-style length normalization: score = log_prob_sum / ((5+len)/6)^alpha.
double beam_score(double log_prob_sum, int64_t length, double alpha);

// Decode with the configured strategy; stops at EOS or max_new_tokens. The
// returned ids include the terminating EOS when one was produced.
std::vector<int> generate_session(Session& session, const GenerationParams& params, int eos_id);
std::vector<int> generate(const ModelRef& ref, const std::string& prompt_text,
                          const GenerationParams& params);
std::string generate_text(const ModelRef& ref, const std::string& prompt_text,
                          const GenerationParams& params);

// Probability vector after temperature and top-p filtering; greedy collapses
// to a point mass on the argmax (ties to the lowest id).
std::vector<double> sampling_distribution(const std::vector<float>& logits,
                                          const GenerationParams& params);

struct SpecDecParams {
  int draft_len = 4;  // tokens proposed per verification pass
};

struct SpecStats {
  int64_t proposed = 0;
  int64_t accepted = 0;
  int64_t target_passes = 0;
  int64_t emitted = 0;
  double acceptance_rate() const {
    return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
  }
};

// One accept/reject decision of the verification rule on explicit
// distributions: accept the draft token with probability min(1, p/q),
// otherwise emit a sample from the normalized residual max(p - q, 0).
struct AcceptResult {
  bool accepted = false;
  int token = 0;
};
AcceptResult spec_accept_step(const std::vector<double>& p, const std::vector<double>& q,
                              int draft_token, Rng& rng);

// Draft/verify decoding: the draft proposes up to draft_len tokens, the
// target scores them in a single pass and the verification rule accepts a
// prefix. Fully accepted rounds emit exactly draft_len tokens, so the
// target runs ceil(n / draft_len) passes when the draft is perfect; under
// greedy verification the output is token-identical to target-only greedy.
std::vector<int> speculative_generate_sessions(Session& target, Session& draft,
                                               const SpecDecParams& sd,
                                               const GenerationParams& params, int eos_id,
                                               SpecStats* stats = nullptr);

// Convenience over a target model and a draft model-or-bundle. When the
// draft bundle conditions on the target's own encoder, the prompt encoding
// is computed once and shared between the two sessions.
std::vector<int> speculative_generate(const Checkpoint& target, const ModelRef& draft,
                                      const std::string& prompt_text, const SpecDecParams& sd,
                                      const GenerationParams& params, SpecStats* stats = nullptr);

}  // namespace l2s
