#include "l2s/bridge.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "l2s/error.hpp"

namespace l2s {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

std::string fusion_name(FusionMode m) { return m == FusionMode::add ? "add" : "replace"; }

FusionMode fusion_from_name(const std::string& s) {
  if (s == "add") return FusionMode::add;
  if (s == "replace") return FusionMode::replace;
  throw ContractError("unknown fusion mode '" + s + "'");
}

std::string tokenizer_mode_name(TokenizerMode m) {
  return m == TokenizerMode::llm_shared ? "llm_shared" : "slm_native";
}

TokenizerMode tokenizer_mode_from_name(const std::string& s) {
  if (s == "llm_shared") return TokenizerMode::llm_shared;
  if (s == "slm_native") return TokenizerMode::slm_native;
  throw ContractError("unknown tokenizer mode '" + s + "'");
}

bool HybridBundle::cross_family() const {
  if (!llm) return false;
  return llm->config.vocab_size != slm->config.vocab_size || llm->vocab_kind != slm->vocab_kind;
}

double HybridBundle::size_ratio() const {
  if (!llm) return 0.0;
  return static_cast<double>(param_count(llm->config)) /
         static_cast<double>(param_count(slm->config));
}

void HybridBundle::validate() const {
  if (!slm || !bridge) throw ContractError("bundle: slm and bridge checkpoints are required");
  if (slm->role != "slm") throw ContractError("bundle: slm checkpoint role is '" + slm->role + "'");
  if (bridge->role != "bridge")
    throw ContractError("bundle: bridge checkpoint role is '" + bridge->role + "'");
  if (slm->config.arch == Arch::encoder_only)
    throw ContractError("bundle: encoder-only model cannot serve as the small model");
  if (!llm) {
    if (!bridge->has_tensor("soft_prompt"))
      throw ContractError("bundle without llm requires a soft_prompt tensor");
    return;
  }
  if (llm->role != "llm") throw ContractError("bundle: llm checkpoint role is '" + llm->role + "'");
  if (llm->config.arch == Arch::decoder_only) {
    if (extraction_layer < 0 || extraction_layer > llm->config.n_layers)
      throw ContractError("bundle: extraction layer " + std::to_string(extraction_layer) +
                          " outside [0, " + std::to_string(llm->config.n_layers) + "]");
  } else if (extraction_layer != -1) {
    throw ContractError("bundle: encoder-family llm uses the last encoder layer (-1)");
  }
  const bool want_align = tokenizer_mode == TokenizerMode::llm_shared && cross_family();
  if (want_align != bridge->has_tensor("embed_proj.w"))
    throw ContractError(want_align
                            ? "bundle: shared tokenizer across families requires embed_proj/new_head"
                            : "bundle: embed_proj/new_head present but alignment path unused");
  if (bridge->tensor("proj.w1").rows() != llm->config.d_model)
    throw ShapeError("bundle: projector input width does not match llm d_model");
  if (bridge->tensor("proj.w2").cols() != slm->config.d_model)
    throw ShapeError("bundle: projector output width does not match slm d_model");
}

Checkpoint init_bridge(int d_l, int d_s, uint64_t seed, bool cross_family, int v_out) {
  Checkpoint ckpt;
  ckpt.role = "bridge";
  ckpt.config.arch = Arch::encoder_only;
  ckpt.config.d_model = d_s;
  ckpt.config.d_ff = d_l;
  ckpt.config.n_heads = 1;
  ckpt.config.vocab_size = cross_family ? v_out : 4;
  Rng rng(seed);
  ckpt.tensors.emplace_back("proj.w1", TensorF::randn({d_l, d_s}, rng, 0.02f));
  ckpt.tensors.emplace_back("proj.b1", TensorF::zeros({d_s}));
  ckpt.tensors.emplace_back("proj.w2", TensorF::randn({d_s, d_s}, rng, 0.02f));
  ckpt.tensors.emplace_back("proj.b2", TensorF::zeros({d_s}));
  if (cross_family) {
    if (v_out < 4) throw ContractError("init_bridge: alignment head needs the shared vocab size");
    ckpt.tensors.emplace_back("embed_proj.w", TensorF::randn({d_l, d_s}, rng, 0.02f));
    ckpt.tensors.emplace_back("embed_proj.b", TensorF::zeros({d_s}));
    ckpt.tensors.emplace_back("new_head.w", TensorF::randn({d_s, v_out}, rng, 0.02f));
    ckpt.tensors.emplace_back("new_head.b", TensorF::zeros({v_out}));
  }
  return ckpt;
}

Checkpoint init_soft_prompt(int prompt_len, int d_s, uint64_t seed) {
  Checkpoint ckpt;
  ckpt.role = "bridge";
  ckpt.config.arch = Arch::encoder_only;
  ckpt.config.d_model = d_s;
  ckpt.config.n_heads = 1;
  ckpt.config.vocab_size = 4;
  Rng rng(seed);
  ckpt.tensors.emplace_back("soft_prompt", TensorF::randn({prompt_len, d_s}, rng, 0.02f));
  return ckpt;
}

int64_t bridge_param_count(const Checkpoint& bridge) {
  int64_t total = 0;
  for (const auto& [name, t] : bridge.tensors) total += t.numel();
  return total;
}

PromptEncoding encode_prompt(const HybridBundle& bundle, const std::vector<int>& llm_prompt_ids) {
  if (!bundle.has_llm()) throw ContractError("encode_prompt: bundle has no large model");
  if (llm_prompt_ids.empty()) throw ContractError("encode_prompt: empty prompt");
  const Checkpoint& llm = *bundle.llm;
  PromptEncoding enc;
  enc.source_model = llm.role;
  enc.source_layer = bundle.extraction_layer;
  if (llm.config.arch == Arch::decoder_only) {
    enc.states = decoder_hidden_prefix(llm, llm_prompt_ids, bundle.extraction_layer);
  } else {
    enc.states = encoder_forward(llm, llm_prompt_ids);
  }
  return enc;
}

TensorF project(const Checkpoint& bridge, const TensorF& h) {
  const TensorF& w1 = bridge.tensor("proj.w1");
  if (h.cols() != w1.rows())
    throw ShapeError("project: input width " + std::to_string(h.cols()) +
                     " does not match projector width " + std::to_string(w1.rows()));
  TensorF mid = relu(add_bias(matmul_counted(h, w1), bridge.tensor("proj.b1")));
  return add_bias(matmul_counted(mid, bridge.tensor("proj.w2")), bridge.tensor("proj.b2"));
}

TensorF fuse(FusionMode mode, const TensorF& z, const TensorF& ex) {
  if (mode == FusionMode::replace) return z;
  if (!z.same_shape(ex))
    throw ContractError("fuse: projected rows " + z.shape_str() + " do not align with prompt embedding " +
                        ex.shape_str() + "; use the llm_shared tokenizer mode to align lengths");
  return add(z, ex);
}

BundleTokenization bundle_tokenize_prompt(const HybridBundle& bundle, const std::string& text) {
  BundleTokenization tok;
  const Vocab slm_vocab = Vocab::from_kind_checked(bundle.slm->vocab_kind, bundle.slm->config.vocab_size);
  if (!bundle.has_llm()) {
    tok.slm_ids = slm_vocab.encode(text, false);
    return tok;
  }
  const Vocab llm_vocab = Vocab::from_kind_checked(bundle.llm->vocab_kind, bundle.llm->config.vocab_size);
  tok.llm_ids = llm_vocab.encode(text, false);
  tok.slm_ids = bundle.tokenizer_mode == TokenizerMode::llm_shared ? tok.llm_ids
                                                                   : slm_vocab.encode(text, false);
  return tok;
}

Vocab bundle_output_vocab(const HybridBundle& bundle) {
  if (bundle.has_llm() && bundle.tokenizer_mode == TokenizerMode::llm_shared)
    return Vocab::from_kind(bundle.llm->vocab_kind);
  return Vocab::from_kind(bundle.slm->vocab_kind);
}

namespace {

// E_X rows with positions added, under the bundle's alignment rule.
TensorF prompt_embedding_rows(const HybridBundle& bundle, const std::vector<int>& ids,
                              int64_t pos_offset) {
  const Checkpoint& slm = *bundle.slm;
  const int64_t d = slm.config.d_model;
  TensorF rows = TensorF::zeros({static_cast<int64_t>(ids.size()), d});
  if (bundle.has_llm() && bundle.tokenizer_mode == TokenizerMode::llm_shared &&
      bundle.cross_family()) {
    // Frozen source embedding rows, projected into the small model's space.
    const TensorF& src = bundle.llm->tensor("tok_emb");
    TensorF gathered = TensorF::zeros({static_cast<int64_t>(ids.size()), src.cols()});
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= src.rows()) throw ContractError("prompt id outside shared vocab");
      std::copy(src.row_ptr(ids[i]), src.row_ptr(ids[i]) + src.cols(),
                gathered.row_ptr(static_cast<int64_t>(i)));
    }
    rows = add_bias(matmul_counted(gathered, bundle.bridge->tensor("embed_proj.w")),
                    bundle.bridge->tensor("embed_proj.b"));
  } else {
    const TensorF& tok = slm.tensor("tok_emb");
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tok.rows()) throw ContractError("prompt id outside slm vocab");
      std::copy(tok.row_ptr(ids[i]), tok.row_ptr(ids[i]) + tok.cols(),
                rows.row_ptr(static_cast<int64_t>(i)));
    }
  }
  const TensorF& pos = slm.tensor("pos_emb");
  for (int64_t i = 0; i < rows.rows(); ++i) {
    if (pos_offset + i >= pos.rows()) throw ContractError("prompt exceeds slm max_seq_len");
    const float* pr = pos.row_ptr(pos_offset + i);
    float* r = rows.row_ptr(i);
    for (int64_t j = 0; j < d; ++j) r[j] += pr[j];
  }
  return rows;
}

}  // namespace

TensorF build_slm_prompt_rows(const HybridBundle& bundle, const BundleTokenization& tok) {
  if (!bundle.has_llm()) {
    // Learned prefix, then ordinary embeddings shifted past it.
    const TensorF& soft = bundle.bridge->tensor("soft_prompt");
    TensorF ex = prompt_embedding_rows(bundle, tok.slm_ids, soft.rows());
    TensorF rows = TensorF::zeros({soft.rows() + ex.rows(), soft.cols()});
    std::copy(soft.data.begin(), soft.data.end(), rows.data.begin());
    std::copy(ex.data.begin(), ex.data.end(), rows.data.begin() + soft.numel());
    return rows;
  }
  const PromptEncoding enc = encode_prompt(bundle, tok.llm_ids);
  const TensorF z = project(*bundle.bridge, enc.states);
  if (bundle.fusion == FusionMode::replace) {
    // The projection serves as a complete soft prompt; the small model's own
    // prompt embedding and positions are discarded at prompt rows.
    return z;
  }
  return fuse(FusionMode::add, z, prompt_embedding_rows(bundle, tok.slm_ids, 0));
}

void bundle_embed_target_row(const HybridBundle& bundle, int token, int64_t position, float* out) {
  const Checkpoint& slm = *bundle.slm;
  const int64_t d = slm.config.d_model;
  if (bundle.has_llm() && bundle.tokenizer_mode == TokenizerMode::llm_shared &&
      bundle.cross_family()) {
    const TensorF& src = bundle.llm->tensor("tok_emb");
    if (token < 0 || token >= src.rows()) throw ContractError("target id outside shared vocab");
    TensorF row({1, src.cols()},
                std::vector<float>(src.row_ptr(token), src.row_ptr(token) + src.cols()));
    TensorF proj = add_bias(matmul_counted(row, bundle.bridge->tensor("embed_proj.w")),
                            bundle.bridge->tensor("embed_proj.b"));
    std::copy(proj.data.begin(), proj.data.end(), out);
    const TensorF& pos = slm.tensor("pos_emb");
    if (position >= pos.rows()) throw ContractError("position exceeds slm max_seq_len");
    const float* pr = pos.row_ptr(position);
    for (int64_t j = 0; j < d; ++j) out[j] += pr[j];
    return;
  }
  embed_token_row(slm, token, position, out);
}

std::vector<float> bundle_head_logits(const HybridBundle& bundle, const float* hidden) {
  const Checkpoint& slm = *bundle.slm;
  if (bundle.has_llm() && bundle.tokenizer_mode == TokenizerMode::llm_shared &&
      bundle.cross_family()) {
    TensorF row({1, slm.config.d_model},
                std::vector<float>(hidden, hidden + slm.config.d_model));
    TensorF nx = layer_norm(row, slm.tensor("ln_f.g"), slm.tensor("ln_f.b"), 1e-5f);
    TensorF logits = add_bias(matmul_counted(nx, bundle.bridge->tensor("new_head.w")),
                              bundle.bridge->tensor("new_head.b"));
    return logits.data;
  }
  return head_logits(slm, hidden);
}

SlmInputs build_slm_inputs(const HybridBundle& bundle, const BundleTokenization& tok,
                           const std::vector<int>& decoded) {
  SlmInputs in;
  TensorF prompt_rows = build_slm_prompt_rows(bundle, tok);
  in.prompt_row_count = prompt_rows.rows();
  const Checkpoint& slm = *bundle.slm;
  const int64_t d = slm.config.d_model;
  if (slm.config.arch == Arch::decoder_only) {
    in.dec_rows = TensorF::zeros({prompt_rows.rows() + static_cast<int64_t>(decoded.size()), d});
    std::copy(prompt_rows.data.begin(), prompt_rows.data.end(), in.dec_rows.data.begin());
    for (size_t i = 0; i < decoded.size(); ++i)
      bundle_embed_target_row(bundle, decoded[i], prompt_rows.rows() + static_cast<int64_t>(i),
                              in.dec_rows.row_ptr(prompt_rows.rows() + static_cast<int64_t>(i)));
  } else {
    in.enc_rows = std::move(prompt_rows);
    in.dec_rows = TensorF::zeros({1 + static_cast<int64_t>(decoded.size()), d});
    bundle_embed_target_row(bundle, Vocab::kBos, 0, in.dec_rows.row_ptr(0));
    for (size_t i = 0; i < decoded.size(); ++i)
      bundle_embed_target_row(bundle, decoded[i], 1 + static_cast<int64_t>(i),
                              in.dec_rows.row_ptr(1 + static_cast<int64_t>(i)));
  }
  return in;
}

int64_t bundle_flops(const HybridBundle& bundle, int64_t m, int64_t n) {
  const ModelConfig& scfg = bundle.slm->config;
  const int64_t ds = scfg.d_model;
  int64_t total = 0;
  int64_t prompt_rows = m;
  if (bundle.has_llm()) {
    const ModelConfig& lcfg = bundle.llm->config;
    const int64_t dl = lcfg.d_model;
    if (lcfg.arch == Arch::decoder_only) {
      const int64_t per_row =
          8 * dl * dl + 4 * dl * lcfg.d_ff;  // qkvo + mlp weight flops per block row
      total += m * bundle.extraction_layer * per_row;
    } else {
      total += m * lcfg.n_layers * (8 * dl * dl + 4 * dl * lcfg.d_ff);
    }
    total += 2 * m * dl * ds + 2 * m * ds * ds;  // projector
    if (bundle.tokenizer_mode == TokenizerMode::llm_shared && bundle.cross_family()) {
      // Embedding projection: every prompt row once (replace mode drops the
      // prompt embedding entirely), plus each decoder input row that carries
      // a token (BOS / decoded feeds).
      const int64_t prompt_embeds = bundle.fusion == FusionMode::add ? m : 0;
      const int64_t target_feeds =
          scfg.arch == Arch::decoder_only ? std::max<int64_t>(0, n - 1) : n;
      total += 2 * dl * ds * (prompt_embeds + target_feeds);
    }
  } else {
    prompt_rows += bundle.bridge->tensor("soft_prompt").rows();
  }
  // Small-model stack; the replacement head changes only the head width.
  const int64_t vout = (bundle.has_llm() && bundle.tokenizer_mode == TokenizerMode::llm_shared &&
                        bundle.cross_family())
                           ? bundle.bridge->tensor("new_head.w").cols()
                           : scfg.vocab_size;
  const int64_t head = 2 * ds * vout;
  int64_t row_core = scfg.n_layers * (8 * ds * ds + 4 * ds * scfg.d_ff);
  if (scfg.arch == Arch::encoder_decoder) {
    const int64_t enc_row = scfg.n_layers * (8 * ds * ds + 4 * ds * scfg.d_ff);
    total += prompt_rows * enc_row;                                // encoder prefill
    total += scfg.n_layers * 2 * 2 * prompt_rows * ds * ds;        // cross K/V
    row_core += scfg.n_layers * 2 * 2 * ds * ds;                   // cross q + out per step
    total += n * (row_core + head);
  } else {
    total += (prompt_rows - 1) * row_core;  // stream prefill up to the last prompt row
    total += n * (row_core + head);
  }
  return total;
}

void save_bundle(const HybridBundle& bundle, const std::string& manifest_path) {
  const fs::path mp(manifest_path);
  const std::string stem = (mp.parent_path() / mp.stem()).string();
  ordered_json j;
  if (bundle.has_llm()) {
    save_checkpoint(*bundle.llm, stem + ".llm.l2s");
    j["llm_path"] = mp.stem().string() + ".llm.l2s";
  } else {
    j["llm_path"] = nullptr;
  }
  save_checkpoint(*bundle.slm, stem + ".slm.l2s");
  save_checkpoint(*bundle.bridge, stem + ".bridge.l2s");
  j["slm_path"] = mp.stem().string() + ".slm.l2s";
  j["bridge_path"] = mp.stem().string() + ".bridge.l2s";
  j["fusion"] = fusion_name(bundle.fusion);
  j["tokenizer_mode"] = tokenizer_mode_name(bundle.tokenizer_mode);
  j["extraction_layer"] = bundle.extraction_layer;
  std::ofstream f(manifest_path);
  if (!f) throw IoError("cannot open '" + manifest_path + "' for writing");
  f << j.dump(2) << "\n";
}

HybridBundle load_bundle(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot open '" + manifest_path + "'");
  ordered_json j = ordered_json::parse(f);
  const fs::path dir = fs::path(manifest_path).parent_path();
  HybridBundle b;
  if (!j.at("llm_path").is_null())
    b.llm = std::make_shared<Checkpoint>(
        load_checkpoint((dir / j.at("llm_path").get<std::string>()).string()));
  b.slm = std::make_shared<Checkpoint>(
      load_checkpoint((dir / j.at("slm_path").get<std::string>()).string()));
  b.bridge = std::make_shared<Checkpoint>(
      load_checkpoint((dir / j.at("bridge_path").get<std::string>()).string()));
  b.fusion = fusion_from_name(j.at("fusion").get<std::string>());
  b.tokenizer_mode = tokenizer_mode_from_name(j.at("tokenizer_mode").get<std::string>());
  b.extraction_layer = j.at("extraction_layer").get<int>();
  b.validate();
  return b;
}

}  // namespace l2s
