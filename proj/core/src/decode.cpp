#include "l2s/decode.hpp"

#include <algorithm>
#include <cmath>

#include "l2s/error.hpp"
#include "l2s/model.hpp"

namespace l2s {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::greedy: return "greedy";
    case Strategy::nucleus: return "nucleus";
    case Strategy::beam: return "beam";
  }
  return "?";
}

Strategy strategy_from_name(const std::string& s) {
  if (s == "greedy") return Strategy::greedy;
  if (s == "nucleus") return Strategy::nucleus;
  if (s == "beam") return Strategy::beam;
  throw ContractError("unknown strategy '" + s + "'");
}

void GenerationParams::validate() const {
  if (max_new_tokens < 1) throw ContractError("max_new_tokens must be >= 1");
  if (beam_width < 1) throw ContractError("beam_width must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ContractError("top_p must be in (0, 1]");
  if (temperature < 0.0) throw ContractError("temperature must be >= 0");
}

Vocab ModelRef::vocab() const {
  if (bundle) return bundle_output_vocab(*bundle);
  return Vocab::from_kind_checked(model->vocab_kind, model->config.vocab_size);
}

namespace {

// Lowest-id argmax, the tie rule used everywhere for determinism.
int argmax(const std::vector<float>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> log_softmax(const std::vector<float>& logits) {
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = std::log(sum) + mx;
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

// --- plain model session ---

class PlainSession final : public Session {
 public:
  PlainSession(const Checkpoint& model, std::vector<int> prompt_ids, const TensorF* enc_out)
      : model_(&model), prompt_ids_(std::move(prompt_ids)), cache_(KvCache::for_model(model.config)) {
    if (model.config.arch == Arch::encoder_only)
      throw ContractError("generate: encoder-only model cannot decode");
    if (prompt_ids_.empty()) throw ContractError("generate: empty prompt");
    if (enc_out) enc_out_ = *enc_out;
  }

  std::vector<float> prefill() override {
    const ModelConfig& cfg = model_->config;
    if (cfg.arch == Arch::encoder_decoder) {
      if (enc_out_.numel() == 0) enc_out_ = encoder_forward(*model_, prompt_ids_);
      init_cross_cache(*model_, enc_out_, cache_);
      return feed(Vocab::kBos);
    }
    TensorF rows = TensorF::zeros({static_cast<int64_t>(prompt_ids_.size()), cfg.d_model});
    for (size_t i = 0; i < prompt_ids_.size(); ++i)
      embed_token_row(*model_, prompt_ids_[i], static_cast<int64_t>(i),
                      rows.row_ptr(static_cast<int64_t>(i)));
    TensorF hidden = decoder_append_rows(*model_, cache_, rows);
    return head_logits(*model_, hidden.row_ptr(hidden.rows() - 1));
  }

  std::vector<float> step(int token) override { return feed(token); }

  TensorF step_block(const std::vector<int>& tokens) override {
    const ModelConfig& cfg = model_->config;
    TensorF rows = TensorF::zeros({static_cast<int64_t>(tokens.size()), cfg.d_model});
    for (size_t i = 0; i < tokens.size(); ++i)
      embed_token_row(*model_, tokens[i], cache_.filled + static_cast<int64_t>(i),
                      rows.row_ptr(static_cast<int64_t>(i)));
    TensorF hidden = decoder_append_rows(*model_, cache_, rows);
    TensorF logits = TensorF::zeros({hidden.rows(), cfg.vocab_size});
    for (int64_t i = 0; i < hidden.rows(); ++i) {
      std::vector<float> row = head_logits(*model_, hidden.row_ptr(i));
      std::copy(row.begin(), row.end(), logits.row_ptr(i));
    }
    return logits;
  }

  void rollback(int64_t count) override { cache_.truncate(cache_.filled - count); }

  std::unique_ptr<Session> clone() const override { return std::make_unique<PlainSession>(*this); }

  int vocab_size() const override { return model_->config.vocab_size; }

  int64_t capacity_remaining() const override {
    const int64_t pending =
        cache_.filled > 0 ? 0
        : model_->config.arch == Arch::decoder_only ? static_cast<int64_t>(prompt_ids_.size())
                                                    : 1;
    return cache_.capacity - cache_.filled - pending;
  }

 private:
  std::vector<float> feed(int token) {
    TensorF row = TensorF::zeros({1, model_->config.d_model});
    embed_token_row(*model_, token, cache_.filled, row.data.data());
    TensorF hidden = decoder_append_rows(*model_, cache_, row);
    return head_logits(*model_, hidden.row_ptr(0));
  }

  const Checkpoint* model_;
  std::vector<int> prompt_ids_;
  TensorF enc_out_;
  KvCache cache_;
};

// --- hybrid bundle session ---

class BundleSession final : public Session {
 public:
  BundleSession(const HybridBundle& bundle, BundleTokenization tok, const TensorF* prompt_states)
      : bundle_(&bundle), tok_(std::move(tok)), cache_(KvCache::for_model(bundle.slm->config)) {
    if (tok_.slm_ids.empty()) throw ContractError("generate: empty prompt");
    if (prompt_states) prompt_states_ = *prompt_states;
  }

  std::vector<float> prefill() override {
    TensorF rows;
    if (bundle_->has_llm() && prompt_states_.numel() != 0) {
      // Shared precomputed encoding: projector and fusion still run here.
      const TensorF z = project(*bundle_->bridge, prompt_states_);
      if (bundle_->fusion == FusionMode::replace) {
        rows = z;
      } else {
        rows = build_add_rows(z);
      }
    } else {
      rows = build_slm_prompt_rows(*bundle_, tok_);
    }
    const ModelConfig& scfg = bundle_->slm->config;
    if (scfg.arch == Arch::encoder_decoder) {
      TensorF enc_out = encoder_forward_rows(*bundle_->slm, rows);
      init_cross_cache(*bundle_->slm, enc_out, cache_);
      return feed(Vocab::kBos);
    }
    TensorF hidden = decoder_append_rows(*bundle_->slm, cache_, rows);
    return bundle_head_logits(*bundle_, hidden.row_ptr(hidden.rows() - 1));
  }

  std::vector<float> step(int token) override { return feed(token); }

  TensorF step_block(const std::vector<int>& tokens) override {
    const ModelConfig& scfg = bundle_->slm->config;
    TensorF rows = TensorF::zeros({static_cast<int64_t>(tokens.size()), scfg.d_model});
    for (size_t i = 0; i < tokens.size(); ++i)
      bundle_embed_target_row(*bundle_, tokens[i], cache_.filled + static_cast<int64_t>(i),
                              rows.row_ptr(static_cast<int64_t>(i)));
    TensorF hidden = decoder_append_rows(*bundle_->slm, cache_, rows);
    const int v = vocab_size();
    TensorF logits = TensorF::zeros({hidden.rows(), v});
    for (int64_t i = 0; i < hidden.rows(); ++i) {
      std::vector<float> row = bundle_head_logits(*bundle_, hidden.row_ptr(i));
      std::copy(row.begin(), row.end(), logits.row_ptr(i));
    }
    return logits;
  }

  void rollback(int64_t count) override { cache_.truncate(cache_.filled - count); }

  std::unique_ptr<Session> clone() const override { return std::make_unique<BundleSession>(*this); }

  int vocab_size() const override {
    if (bundle_->has_llm() && bundle_->tokenizer_mode == TokenizerMode::llm_shared &&
        bundle_->cross_family())
      return static_cast<int>(bundle_->bridge->tensor("new_head.w").cols());
    return bundle_->slm->config.vocab_size;
  }

  int64_t capacity_remaining() const override {
    int64_t pending = 0;
    if (cache_.filled == 0) {
      if (bundle_->slm->config.arch != Arch::decoder_only) {
        pending = 1;  // decoder start token
      } else if (!bundle_->has_llm()) {
        pending = bundle_->bridge->tensor("soft_prompt").rows() +
                  static_cast<int64_t>(tok_.slm_ids.size());
      } else if (bundle_->fusion == FusionMode::replace) {
        pending = static_cast<int64_t>(tok_.llm_ids.size());
      } else {
        pending = static_cast<int64_t>(tok_.slm_ids.size());
      }
    }
    return cache_.capacity - cache_.filled - pending;
  }

 private:
  TensorF build_add_rows(const TensorF& z) {
    // E_X + positions, then + Z; mirrors build_slm_prompt_rows for add mode.
    const Checkpoint& slm = *bundle_->slm;
    TensorF ex = TensorF::zeros({static_cast<int64_t>(tok_.slm_ids.size()), slm.config.d_model});
    for (size_t i = 0; i < tok_.slm_ids.size(); ++i)
      bundle_embed_target_row(*bundle_, tok_.slm_ids[i], static_cast<int64_t>(i),
                              ex.row_ptr(static_cast<int64_t>(i)));
    return fuse(FusionMode::add, z, ex);
  }

  std::vector<float> feed(int token) {
    TensorF row = TensorF::zeros({1, bundle_->slm->config.d_model});
    bundle_embed_target_row(*bundle_, token, cache_.filled, row.data.data());
    TensorF hidden = decoder_append_rows(*bundle_->slm, cache_, row);
    return bundle_head_logits(*bundle_, hidden.row_ptr(0));
  }

  const HybridBundle* bundle_;
  BundleTokenization tok_;
  TensorF prompt_states_;
  KvCache cache_;
};

}  // namespace

std::unique_ptr<Session> make_model_session(const Checkpoint& model,
                                            const std::vector<int>& prompt_ids,
                                            const TensorF* enc_out) {
  return std::make_unique<PlainSession>(model, prompt_ids, enc_out);
}

std::unique_ptr<Session> make_bundle_session(const HybridBundle& bundle,
                                             const BundleTokenization& tok,
                                             const TensorF* prompt_states) {
  return std::make_unique<BundleSession>(bundle, tok, prompt_states);
}

std::unique_ptr<Session> make_session(const ModelRef& ref, const std::string& prompt_text) {
  if (ref.bundle) return make_bundle_session(*ref.bundle, bundle_tokenize_prompt(*ref.bundle, prompt_text));
  const Vocab vocab = Vocab::from_kind_checked(ref.model->vocab_kind, ref.model->config.vocab_size);
  return make_model_session(*ref.model, vocab.encode(prompt_text, false));
}

double beam_score(double log_prob_sum, int64_t length, double alpha) {
  if (length < 1) throw ContractError("beam_score: length must be >= 1");
  return log_prob_sum / std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

std::vector<double> sampling_distribution(const std::vector<float>& logits,
                                          const GenerationParams& params) {
  const size_t v = logits.size();
  std::vector<double> p(v, 0.0);
  if (params.strategy == Strategy::greedy || params.temperature < 1e-9) {
    p[static_cast<size_t>(argmax(logits))] = 1.0;
    return p;
  }
  double mx = -1e300;
  for (float x : logits) mx = std::max(mx, static_cast<double>(x) / params.temperature);
  double sum = 0.0;
  for (size_t i = 0; i < v; ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) / params.temperature - mx);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  if (params.top_p >= 1.0) return p;
  // Smallest prefix of the sorted distribution reaching top_p mass.
  std::vector<size_t> order(v);
  for (size_t i = 0; i < v; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  double cum = 0.0;
  size_t keep = 0;
  for (; keep < v; ++keep) {
    cum += p[order[keep]];
    if (cum >= params.top_p) {
      ++keep;
      break;
    }
  }
  std::vector<double> filtered(v, 0.0);
  double mass = 0.0;
  for (size_t i = 0; i < keep; ++i) mass += p[order[i]];
  for (size_t i = 0; i < keep; ++i) filtered[order[i]] = p[order[i]] / mass;
  return filtered;
}

namespace {

int sample_from(const std::vector<double>& p, Rng& rng) {
  const double u = rng.next_uniform();
  double cum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<int>(i);
  }
  // Rounding slack: fall back to the last nonzero entry.
  for (size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return static_cast<int>(i);
  return 0;
}

std::vector<int> generate_greedy_or_nucleus(Session& session, const GenerationParams& params,
                                            int eos_id) {
  Rng rng(params.seed);
  std::vector<int> out;
  std::vector<float> logits = session.prefill();
  while (true) {
    int token;
    if (params.strategy == Strategy::greedy || params.temperature < 1e-9) {
      token = argmax(logits);
    } else {
      token = sample_from(sampling_distribution(logits, params), rng);
    }
    out.push_back(token);
    if (token == eos_id || static_cast<int>(out.size()) >= params.max_new_tokens) break;
    logits = session.step(token);
  }
  return out;
}

struct BeamCandidate {
  std::unique_ptr<Session> session;
  std::vector<int> tokens;
  std::vector<float> last_logits;
  double log_prob = 0.0;
};

std::vector<int> generate_beam(Session& session, const GenerationParams& params, int eos_id) {
  struct Finished {
    std::vector<int> tokens;
    double score;
  };
  std::vector<Finished> finished;
  std::vector<BeamCandidate> live;
  {
    BeamCandidate root;
    root.session = session.clone();
    root.last_logits = root.session->prefill();
    live.push_back(std::move(root));
  }
  const int width = params.beam_width;
  while (!live.empty()) {
    // Expand every live beam by its top continuations, prune globally on
    // accumulated log probability.
    struct Expansion {
      size_t parent;
      int token;
      double log_prob;
    };
    std::vector<Expansion> exps;
    for (size_t c = 0; c < live.size(); ++c) {
      std::vector<double> lp = log_softmax(live[c].last_logits);
      std::vector<int> order(lp.size());
      for (size_t i = 0; i < lp.size(); ++i) order[i] = static_cast<int>(i);
      std::partial_sort(order.begin(), order.begin() + std::min<size_t>(width, order.size()),
                        order.end(), [&](int a, int b) {
                          if (lp[static_cast<size_t>(a)] != lp[static_cast<size_t>(b)])
                            return lp[static_cast<size_t>(a)] > lp[static_cast<size_t>(b)];
                          return a < b;
                        });
      for (int i = 0; i < std::min<int>(width, static_cast<int>(order.size())); ++i)
        exps.push_back({c, order[static_cast<size_t>(i)],
                        live[c].log_prob + lp[static_cast<size_t>(order[static_cast<size_t>(i)])]});
    }
    std::sort(exps.begin(), exps.end(), [](const Expansion& a, const Expansion& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    if (static_cast<int>(exps.size()) > width) exps.resize(static_cast<size_t>(width));

    std::vector<BeamCandidate> next;
    for (const Expansion& e : exps) {
      std::vector<int> tokens = live[e.parent].tokens;
      tokens.push_back(e.token);
      const int64_t len = static_cast<int64_t>(tokens.size());
      if (e.token == eos_id || len >= params.max_new_tokens) {
        finished.push_back({std::move(tokens), beam_score(e.log_prob, len, params.length_penalty)});
        continue;
      }
      BeamCandidate cand;
      cand.session = live[e.parent].session->clone();
      cand.last_logits = cand.session->step(e.token);
      cand.tokens = std::move(tokens);
      cand.log_prob = e.log_prob;
      next.push_back(std::move(cand));
    }
    live = std::move(next);
    // Once enough hypotheses finished, stop when no live beam can beat them.
    if (static_cast<int>(finished.size()) >= width) break;
  }
  if (finished.empty()) throw ContractError("beam search produced no hypotheses");
  const Finished* best = &finished.front();
  for (const Finished& f : finished)
    if (f.score > best->score) best = &f;
  return best->tokens;
}

}  // namespace

std::vector<int> generate_session(Session& session, const GenerationParams& params, int eos_id) {
  params.validate();
  if (params.max_new_tokens > session.capacity_remaining())
    throw ContractError("max_new_tokens " + std::to_string(params.max_new_tokens) +
                        " exceeds remaining context of " +
                        std::to_string(session.capacity_remaining()));
  if (params.strategy == Strategy::beam) return generate_beam(session, params, eos_id);
  return generate_greedy_or_nucleus(session, params, eos_id);
}

std::vector<int> generate(const ModelRef& ref, const std::string& prompt_text,
                          const GenerationParams& params) {
  auto session = make_session(ref, prompt_text);
  return generate_session(*session, params, ref.eos_id());
}

std::string generate_text(const ModelRef& ref, const std::string& prompt_text,
                          const GenerationParams& params) {
  return ref.vocab().decode(generate(ref, prompt_text, params));
}

AcceptResult spec_accept_step(const std::vector<double>& p, const std::vector<double>& q,
                              int draft_token, Rng& rng) {
  const double pq = q[static_cast<size_t>(draft_token)] > 0.0
                        ? p[static_cast<size_t>(draft_token)] / q[static_cast<size_t>(draft_token)]
                        : 0.0;
  if (rng.next_uniform() < std::min(1.0, pq)) return {true, draft_token};
  std::vector<double> residual(p.size());
  double mass = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    residual[i] = std::max(0.0, p[i] - q[i]);
    mass += residual[i];
  }
  if (mass <= 0.0) return {true, draft_token};  // p == q: rejection cannot occur
  for (double& r : residual) r /= mass;
  return {false, sample_from(residual, rng)};
}

std::vector<int> speculative_generate_sessions(Session& target, Session& draft,
                                               const SpecDecParams& sd,
                                               const GenerationParams& params, int eos_id,
                                               SpecStats* stats) {
  if (sd.draft_len < 1) throw ContractError("draft_len must be >= 1");
  if (target.vocab_size() != draft.vocab_size())
    throw ContractError("speculative decoding requires a shared output vocabulary (target " +
                        std::to_string(target.vocab_size()) + ", draft " +
                        std::to_string(draft.vocab_size()) + ")");
  const bool greedy = params.strategy == Strategy::greedy || params.temperature < 1e-9;
  Rng rng(params.seed);
  SpecStats local;
  std::vector<int> out;

  std::vector<float> t_logits = target.prefill();
  std::vector<float> d_logits = draft.prefill();
  bool done = false;
  while (!done && static_cast<int>(out.size()) < params.max_new_tokens) {
    int gamma = std::min(sd.draft_len, params.max_new_tokens - static_cast<int>(out.size()));
    const int64_t cap = std::min(target.capacity_remaining(), draft.capacity_remaining());
    if (cap < 1)
      throw ContractError("speculative decoding ran out of context before max_new_tokens");
    if (gamma > cap) gamma = static_cast<int>(cap);
    // Draft proposes gamma tokens autoregressively.
    std::vector<int> proposal(static_cast<size_t>(gamma));
    std::vector<std::vector<double>> q_dists(static_cast<size_t>(gamma));
    std::vector<float> d_cur = d_logits;
    for (int j = 0; j < gamma; ++j) {
      q_dists[static_cast<size_t>(j)] = sampling_distribution(d_cur, params);
      proposal[static_cast<size_t>(j)] =
          greedy ? static_cast<int>(std::max_element(d_cur.begin(), d_cur.end()) - d_cur.begin())
                 : sample_from(q_dists[static_cast<size_t>(j)], rng);
      if (j + 1 < gamma) d_cur = draft.step(proposal[static_cast<size_t>(j)]);
    }
    // One parallel target pass over the proposed block. Row j holds the
    // distribution after proposal[0..j]; the pre-block logits cover
    // proposal[0] itself.
    TensorF t_block = target.step_block(proposal);
    local.target_passes++;
    local.proposed += gamma;

    int accepted = 0;
    int correction = -1;
    for (int j = 0; j < gamma; ++j) {
      std::vector<float> row;
      if (j == 0) {
        row = t_logits;
      } else {
        row.assign(t_block.row_ptr(j - 1), t_block.row_ptr(j - 1) + t_block.cols());
      }
      if (greedy) {
        const int want = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (proposal[static_cast<size_t>(j)] == want) {
          ++accepted;
        } else {
          correction = want;
          break;
        }
      } else {
        const std::vector<double> p = sampling_distribution(row, params);
        const AcceptResult r = spec_accept_step(p, q_dists[static_cast<size_t>(j)],
                                                proposal[static_cast<size_t>(j)], rng);
        if (r.accepted && r.token == proposal[static_cast<size_t>(j)]) {
          ++accepted;
        } else {
          correction = r.token;
          break;
        }
      }
    }
    local.accepted += accepted;

    // Emit the accepted prefix plus the correction (if any); fully accepted
    // rounds emit exactly gamma tokens. The logits for the position after a
    // full block are available but deliberately unused, keeping the number
    // of verification passes at ceil(n / gamma) for a perfect draft.
    std::vector<int> emit(proposal.begin(), proposal.begin() + accepted);
    if (correction >= 0) emit.push_back(correction);
    for (int tok : emit) {
      out.push_back(tok);
      if (tok == eos_id || static_cast<int>(out.size()) >= params.max_new_tokens) {
        done = true;
        break;
      }
    }
    if (done) break;

    // Re-align both sessions with the emitted sequence and refresh logits.
    const int emitted_now = static_cast<int>(emit.size());
    target.rollback(gamma - (emitted_now - 1));
    t_logits = target.step(emit.back());
    draft.rollback((gamma - 1) - (emitted_now - 1));
    d_logits = draft.step(emit.back());
  }
  local.emitted = static_cast<int64_t>(out.size());
  if (stats) *stats = local;
  return out;
}

std::vector<int> speculative_generate(const Checkpoint& target, const ModelRef& draft,
                                      const std::string& prompt_text, const SpecDecParams& sd,
                                      const GenerationParams& params, SpecStats* stats) {
  const Vocab tvocab = Vocab::from_kind_checked(target.vocab_kind, target.config.vocab_size);
  const std::vector<int> target_ids = tvocab.encode(prompt_text, false);
  std::unique_ptr<Session> tsess, dsess;
  if (draft.bundle && draft.bundle->has_llm() &&
      target.config.arch == Arch::encoder_decoder && draft.bundle->extraction_layer == -1 &&
      (draft.bundle->llm.get() == &target || weights_equal(*draft.bundle->llm, target))) {
    // The draft conditions on the target's own encoder: run it once and hand
    // the states to both sides.
    TensorF enc_out = encoder_forward(target, target_ids);
    tsess = make_model_session(target, target_ids, &enc_out);
    dsess = make_bundle_session(*draft.bundle, bundle_tokenize_prompt(*draft.bundle, prompt_text),
                                &enc_out);
  } else {
    tsess = make_model_session(target, target_ids);
    dsess = draft.bundle
                ? make_bundle_session(*draft.bundle, bundle_tokenize_prompt(*draft.bundle, prompt_text))
                : make_model_session(*draft.model,
                                     Vocab::from_kind_checked(draft.model->vocab_kind, draft.model->config.vocab_size)
                                         .encode(prompt_text, false));
  }
  return speculative_generate_sessions(*tsess, *dsess, sd, params, Vocab::kEos, stats);
}

}  // namespace l2s
