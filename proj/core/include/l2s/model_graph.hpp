#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "l2s/checkpoint.hpp"
#include "l2s/error.hpp"
#include "l2s/graph.hpp"

namespace l2s {

// Checkpoint tensors bound onto a tape. Tensors whose names match the
// trainable predicate become leaves (gradients tracked); everything else is
// recorded as a constant, so frozen parameters are structurally absent from
// the backward pass.
template <typename T>
struct BoundParams {
  const Checkpoint* ckpt = nullptr;
  std::unordered_map<std::string, typename Graph<T>::Id> ids;

  static BoundParams bind(Graph<T>& g, const Checkpoint& ckpt,
                          const std::function<bool(const std::string&)>& trainable) {
    BoundParams bp;
    bp.ckpt = &ckpt;
    for (const auto& [name, tensor] : ckpt.tensors) {
      Tensor<T> v = cast_tensor<float, T>(tensor);
      bp.ids[name] = trainable && trainable(name) ? g.leaf(std::move(v)) : g.constant(std::move(v));
    }
    return bp;
  }

  typename Graph<T>::Id at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw ContractError("no bound tensor '" + name + "'");
    return it->second;
  }
};

namespace graph_ops {

constexpr double kLnEpsG = 1e-5;

template <typename T>
using Id = typename Graph<T>::Id;

template <typename T>
Id<T> linear(Graph<T>& g, const BoundParams<T>& p, const std::string& prefix, Id<T> x,
             const char* w, const char* b) {
  return g.add_bias(g.matmul(x, p.at(prefix + "." + w)), p.at(prefix + "." + b));
}

template <typename T>
Id<T> norm(Graph<T>& g, const BoundParams<T>& p, const std::string& name, Id<T> x) {
  return g.layer_norm(x, p.at(name + ".g"), p.at(name + ".b"), T(kLnEpsG));
}

// Multi-head attention, queries from `xq`, keys/values from `xkv`. The
// causal offset shifts the mask diagonal; pass nullopt for bidirectional.
template <typename T>
Id<T> attention(Graph<T>& g, const BoundParams<T>& p, const std::string& prefix, Id<T> xq,
                Id<T> xkv, int n_heads, std::optional<int64_t> causal_offset) {
  Id<T> q = linear(g, p, prefix, xq, "wq", "bq");
  Id<T> k = linear(g, p, prefix, xkv, "wk", "bk");
  Id<T> v = linear(g, p, prefix, xkv, "wv", "bv");
  const int64_t d = g.value(q).cols();
  const int64_t hd = d / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  std::vector<Id<T>> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Id<T> qh = g.slice_cols(q, h * hd, (h + 1) * hd);
    Id<T> kh = g.slice_cols(k, h * hd, (h + 1) * hd);
    Id<T> vh = g.slice_cols(v, h * hd, (h + 1) * hd);
    Id<T> scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
    if (causal_offset) scores = g.causal_mask(scores, *causal_offset);
    heads.push_back(g.matmul(g.softmax_rows(scores), vh));
  }
  Id<T> cat = g.concat_cols(heads);
  return linear(g, p, prefix, cat, "wo", "bo");
}

template <typename T>
Id<T> mlp(Graph<T>& g, const BoundParams<T>& p, const std::string& prefix, Id<T> x) {
  Id<T> h = g.gelu(g.add_bias(g.matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
  return g.add_bias(g.matmul(h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

template <typename T>
Id<T> embed_stream(Graph<T>& g, const BoundParams<T>& p, const std::vector<int>& tokens,
                   int64_t pos_offset) {
  std::vector<int> pos_ids(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) pos_ids[i] = static_cast<int>(pos_offset) + static_cast<int>(i);
  Id<T> te = g.embedding_rows(p.at("tok_emb"), tokens);
  Id<T> pe = g.embedding_rows(p.at("pos_emb"), pos_ids);
  return g.add(te, pe);
}

template <typename T>
Id<T> encoder_stack(Graph<T>& g, const BoundParams<T>& p, Id<T> rows) {
  const ModelConfig& cfg = p.ckpt->config;
  if (cfg.arch == Arch::decoder_only) throw ContractError("encoder_stack: no encoder in model");
  Id<T> x = rows;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string pre = "enc." + std::to_string(i);
    Id<T> nx = norm(g, p, pre + ".ln1", x);
    x = g.add(x, attention(g, p, pre + ".attn", nx, nx, cfg.n_heads, std::nullopt));
    x = g.add(x, mlp(g, p, pre + ".mlp", norm(g, p, pre + ".ln2", x)));
  }
  return norm(g, p, "enc_ln_f", x);
}

// Causal decoder over embedded rows; `cross` holds encoder output for
// encoder-decoder models. Runs the first `layers` blocks when given
// (extraction support); -1 means the full stack with final norm and no head.
template <typename T>
Id<T> decoder_stack(Graph<T>& g, const BoundParams<T>& p, Id<T> rows, std::optional<Id<T>> cross) {
  const ModelConfig& cfg = p.ckpt->config;
  if (cfg.arch == Arch::encoder_only) throw ContractError("decoder_stack: encoder-only model");
  if (cross && cfg.arch != Arch::encoder_decoder)
    throw ContractError("cross input supplied to " + arch_name(cfg.arch) + " model");
  if (!cross && cfg.arch == Arch::encoder_decoder)
    throw ContractError("encoder-decoder decoder requires cross input");
  Id<T> x = rows;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string pre = "dec." + std::to_string(i);
    Id<T> nx = norm(g, p, pre + ".ln1", x);
    x = g.add(x, attention(g, p, pre + ".self", nx, nx, cfg.n_heads, int64_t{0}));
    if (cross) {
      Id<T> cx = norm(g, p, pre + ".lnx", x);
      x = g.add(x, attention(g, p, pre + ".cross", cx, *cross, cfg.n_heads, std::nullopt));
    }
    x = g.add(x, mlp(g, p, pre + ".mlp", norm(g, p, pre + ".ln2", x)));
  }
  return x;
}

template <typename T>
Id<T> head(Graph<T>& g, const BoundParams<T>& p, Id<T> hidden) {
  Id<T> nx = norm(g, p, "ln_f", hidden);
  return g.add_bias(g.matmul(nx, p.at("head.w")), p.at("head.b"));
}

// Rows [r0, r1) of x.
template <typename T>
Id<T> slice_rows(Graph<T>& g, Id<T> x, int64_t r0, int64_t r1) {
  Id<T> xt = g.transpose(x);
  return g.transpose(g.slice_cols(xt, r0, r1));
}

}  // namespace graph_ops

// Teacher-forced logits for each target position: row i predicts target[i].
// Decoder-only models consume [prompt; target[0..n-2]] as one causal stream;
// encoder-decoder models encode the prompt (or use `cross_override`) and feed
// [BOS; target[0..n-2]] to the decoder. Matches the incremental decode path
// row for row.
template <typename T>
Tensor<T> full_forward(const Checkpoint& ckpt, const std::vector<int>& prompt,
                       const std::vector<int>& targets,
                       const Tensor<T>* cross_override = nullptr) {
  using gid = typename Graph<T>::Id;
  const ModelConfig& cfg = ckpt.config;
  if (cfg.arch == Arch::encoder_only) throw ContractError("full_forward: model cannot decode");
  if (targets.empty()) return Tensor<T>::zeros({0, cfg.vocab_size});
  Graph<T> g;
  BoundParams<T> p = BoundParams<T>::bind(g, ckpt, nullptr);
  gid logits;
  if (cfg.arch == Arch::decoder_only) {
    if (cross_override) throw ContractError("cross input supplied to decoder_only model");
    if (prompt.empty()) throw ContractError("full_forward: empty prompt");
    std::vector<int> stream = prompt;
    stream.insert(stream.end(), targets.begin(), targets.end() - 1);
    gid rows = graph_ops::embed_stream(g, p, stream, 0);
    gid hidden = graph_ops::decoder_stack<T>(g, p, rows, std::nullopt);
    gid wanted = graph_ops::slice_rows(g, hidden, static_cast<int64_t>(prompt.size()) - 1,
                                       static_cast<int64_t>(stream.size()));
    logits = graph_ops::head(g, p, wanted);
  } else {
    gid cross;
    if (cross_override) {
      cross = g.constant(*cross_override);
    } else {
      if (prompt.empty()) throw ContractError("full_forward: empty prompt");
      gid prows = graph_ops::embed_stream(g, p, prompt, 0);
      cross = graph_ops::encoder_stack(g, p, prows);
    }
    std::vector<int> dec_stream;
    dec_stream.push_back(1 /* BOS */);
    dec_stream.insert(dec_stream.end(), targets.begin(), targets.end() - 1);
    gid rows = graph_ops::embed_stream(g, p, dec_stream, 0);
    gid hidden = graph_ops::decoder_stack(g, p, rows, std::optional<gid>(cross));
    logits = graph_ops::head(g, p, hidden);
  }
  return g.value(logits);
}

}  // namespace l2s
