#include "l2s/model.hpp"

#include <cmath>

#include "l2s/error.hpp"

namespace l2s {

namespace {

thread_local int64_t g_weight_flops = 0;

TensorF linear_w(const TensorF& x, const TensorF& w, const TensorF& b) {
  return add_bias(matmul_counted(x, w), b);
}

struct AttnWeights {
  const TensorF *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
};

AttnWeights attn_weights(const Checkpoint& ckpt, const std::string& prefix) {
  return {&ckpt.tensor(prefix + ".wq"), &ckpt.tensor(prefix + ".bq"),
          &ckpt.tensor(prefix + ".wk"), &ckpt.tensor(prefix + ".bk"),
          &ckpt.tensor(prefix + ".wv"), &ckpt.tensor(prefix + ".bv"),
          &ckpt.tensor(prefix + ".wo"), &ckpt.tensor(prefix + ".bo")};
}

// Multi-head attention of `q_rows` against key/value row matrices, reading
// keys [key_lo, key_hi_for_row(i)). Activation-activation products; not part
// of the weight-FLOPs count.
TensorF attend(const TensorF& q, const TensorF& keys, const TensorF& vals, int n_heads,
               int64_t key_lo, const std::vector<int64_t>& key_hi) {
  const int64_t s = q.rows(), d = q.cols();
  const int64_t hd = d / n_heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
  TensorF out = TensorF::zeros({s, d});
  std::vector<float> scores;
  for (int64_t i = 0; i < s; ++i) {
    const float* qrow = q.row_ptr(i);
    float* orow = out.row_ptr(i);
    const int64_t hi = key_hi[static_cast<size_t>(i)];
    if (hi <= key_lo) continue;  // row with no reachable keys contributes zeros
    scores.resize(static_cast<size_t>(hi - key_lo));
    for (int h = 0; h < n_heads; ++h) {
      const int64_t c0 = h * hd;
      float mx = -1e30f;
      for (int64_t j = key_lo; j < hi; ++j) {
        const float* krow = keys.row_ptr(j) + c0;
        float acc = 0.0f;
        for (int64_t k = 0; k < hd; ++k) acc += qrow[c0 + k] * krow[k];
        acc *= inv_sqrt;
        scores[static_cast<size_t>(j - key_lo)] = acc;
        mx = std::max(mx, acc);
      }
      float sum = 0.0f;
      for (int64_t j = key_lo; j < hi; ++j) {
        float& sc = scores[static_cast<size_t>(j - key_lo)];
        sc = std::exp(sc - mx);
        sum += sc;
      }
      const float inv_sum = 1.0f / sum;
      for (int64_t j = key_lo; j < hi; ++j) {
        const float w = scores[static_cast<size_t>(j - key_lo)] * inv_sum;
        const float* vrow = vals.row_ptr(j) + c0;
        for (int64_t k = 0; k < hd; ++k) orow[c0 + k] += w * vrow[k];
      }
    }
  }
  return out;
}

TensorF mlp_block(const Checkpoint& ckpt, const std::string& prefix, const TensorF& x) {
  TensorF h = gelu(linear_w(x, ckpt.tensor(prefix + ".w1"), ckpt.tensor(prefix + ".b1")));
  return linear_w(h, ckpt.tensor(prefix + ".w2"), ckpt.tensor(prefix + ".b2"));
}

constexpr float kLnEps = 1e-5f;

TensorF norm(const Checkpoint& ckpt, const std::string& name, const TensorF& x) {
  return layer_norm(x, ckpt.tensor(name + ".g"), ckpt.tensor(name + ".b"), kLnEps);
}

TensorF embed_tokens(const Checkpoint& ckpt, const std::vector<int>& tokens, int64_t pos_offset) {
  const TensorF& tok = ckpt.tensor("tok_emb");
  const TensorF& pos = ckpt.tensor("pos_emb");
  const int64_t d = tok.cols();
  TensorF rows = TensorF::zeros({static_cast<int64_t>(tokens.size()), d});
  for (size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= tok.rows())
      throw ContractError("token id " + std::to_string(t) + " outside vocab");
    const int64_t p = pos_offset + static_cast<int64_t>(i);
    if (p >= pos.rows()) throw ContractError("position " + std::to_string(p) + " exceeds max_seq_len");
    float* r = rows.row_ptr(static_cast<int64_t>(i));
    const float* tr = tok.row_ptr(t);
    const float* pr = pos.row_ptr(p);
    for (int64_t j = 0; j < d; ++j) r[j] = tr[j] + pr[j];
  }
  return rows;
}

}  // namespace

void flop_counter_reset() { g_weight_flops = 0; }
int64_t flop_counter_value() { return g_weight_flops; }

TensorF matmul_counted(const TensorF& x, const TensorF& w) {
  g_weight_flops += matmul_flops(x.rows(), x.cols(), w.cols());
  return matmul(x, w);
}

KvCache KvCache::for_model(const ModelConfig& cfg) {
  KvCache c;
  c.capacity = cfg.max_seq_len;
  const bool has_dec = cfg.arch != Arch::encoder_only;
  if (has_dec) {
    c.k.assign(static_cast<size_t>(cfg.n_layers), TensorF::zeros({cfg.max_seq_len, cfg.d_model}));
    c.v = c.k;
  }
  if (cfg.arch == Arch::encoder_decoder) {
    c.cross_k.assign(static_cast<size_t>(cfg.n_layers), TensorF());
    c.cross_v = c.cross_k;
  }
  return c;
}

void KvCache::truncate(int64_t len) {
  if (len > filled) throw ContractError("KvCache::truncate beyond filled length");
  filled = len;
}

TensorF encoder_forward_rows(const Checkpoint& ckpt, const TensorF& rows) {
  const ModelConfig& cfg = ckpt.config;
  if (cfg.arch == Arch::decoder_only)
    throw ContractError("encoder_forward: model has no encoder stack");
  const int64_t m = rows.rows();
  if (m == 0) throw ContractError("encoder_forward: empty prompt");
  if (m > cfg.max_seq_len)
    throw ContractError("encoder_forward: prompt length " + std::to_string(m) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  std::vector<int64_t> all(static_cast<size_t>(m), m);
  TensorF x = rows;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    TensorF nx = norm(ckpt, p + ".ln1", x);
    const AttnWeights w = attn_weights(ckpt, p + ".attn");
    TensorF q = linear_w(nx, *w.wq, *w.bq);
    TensorF k = linear_w(nx, *w.wk, *w.bk);
    TensorF v = linear_w(nx, *w.wv, *w.bv);
    TensorF att = attend(q, k, v, cfg.n_heads, 0, all);
    x = add(x, linear_w(att, *w.wo, *w.bo));
    x = add(x, mlp_block(ckpt, p + ".mlp", norm(ckpt, p + ".ln2", x)));
  }
  return norm(ckpt, "enc_ln_f", x);
}

TensorF encoder_forward(const Checkpoint& ckpt, const std::vector<int>& tokens) {
  if (tokens.empty()) throw ContractError("encoder_forward: empty prompt");
  return encoder_forward_rows(ckpt, embed_tokens(ckpt, tokens, 0));
}

TensorF decoder_hidden_prefix(const Checkpoint& ckpt, const std::vector<int>& tokens, int layers) {
  const ModelConfig& cfg = ckpt.config;
  if (cfg.arch != Arch::decoder_only)
    throw ContractError("decoder_hidden_prefix: decoder-only models only");
  if (layers < 0 || layers > cfg.n_layers)
    throw ContractError("extraction layer " + std::to_string(layers) + " exceeds model depth " +
                        std::to_string(cfg.n_layers));
  if (tokens.empty()) throw ContractError("decoder_hidden_prefix: empty prompt");
  const int64_t m = static_cast<int64_t>(tokens.size());
  TensorF x = embed_tokens(ckpt, tokens, 0);
  std::vector<int64_t> causal(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) causal[static_cast<size_t>(i)] = i + 1;
  for (int i = 0; i < layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    TensorF nx = norm(ckpt, p + ".ln1", x);
    const AttnWeights w = attn_weights(ckpt, p + ".self");
    TensorF q = linear_w(nx, *w.wq, *w.bq);
    TensorF k = linear_w(nx, *w.wk, *w.bk);
    TensorF v = linear_w(nx, *w.wv, *w.bv);
    TensorF att = attend(q, k, v, cfg.n_heads, 0, causal);
    x = add(x, linear_w(att, *w.wo, *w.bo));
    x = add(x, mlp_block(ckpt, p + ".mlp", norm(ckpt, p + ".ln2", x)));
  }
  return x;
}

void embed_token_row(const Checkpoint& ckpt, int token, int64_t position, float* out) {
  const TensorF& tok = ckpt.tensor("tok_emb");
  const TensorF& pos = ckpt.tensor("pos_emb");
  if (token < 0 || token >= tok.rows())
    throw ContractError("token id " + std::to_string(token) + " outside vocab");
  if (position >= pos.rows()) throw ContractError("position exceeds max_seq_len");
  const float* tr = tok.row_ptr(token);
  const float* pr = pos.row_ptr(position);
  for (int64_t j = 0; j < tok.cols(); ++j) out[j] = tr[j] + pr[j];
}

void init_cross_cache(const Checkpoint& ckpt, const TensorF& enc_out, KvCache& cache) {
  const ModelConfig& cfg = ckpt.config;
  if (cfg.arch != Arch::encoder_decoder)
    throw ContractError("cross-attention input supplied to " + arch_name(cfg.arch) + " model");
  cache.cross_len = enc_out.rows();
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "dec." + std::to_string(i) + ".cross";
    cache.cross_k[static_cast<size_t>(i)] =
        linear_w(enc_out, ckpt.tensor(p + ".wk"), ckpt.tensor(p + ".bk"));
    cache.cross_v[static_cast<size_t>(i)] =
        linear_w(enc_out, ckpt.tensor(p + ".wv"), ckpt.tensor(p + ".bv"));
  }
}

TensorF decoder_append_rows(const Checkpoint& ckpt, KvCache& cache, const TensorF& rows,
                            int64_t min_attend_pos) {
  const ModelConfig& cfg = ckpt.config;
  if (cfg.arch == Arch::encoder_only)
    throw ContractError("decoder_append_rows: encoder-only model cannot decode");
  if (cfg.arch == Arch::encoder_decoder && cache.cross_len == 0)
    throw ContractError("decoder_append_rows: encoder-decoder model requires cross input");
  const int64_t s = rows.rows();
  if (cache.filled + s > cache.capacity)
    throw ContractError("KV cache overflow: " + std::to_string(cache.filled + s) + " > " +
                        std::to_string(cache.capacity));
  const int64_t base = cache.filled;
  std::vector<int64_t> causal(static_cast<size_t>(s));
  for (int64_t i = 0; i < s; ++i) causal[static_cast<size_t>(i)] = base + i + 1;
  std::vector<int64_t> full_cross(static_cast<size_t>(s), cache.cross_len);

  TensorF x = rows;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    const size_t li = static_cast<size_t>(i);
    TensorF nx = norm(ckpt, p + ".ln1", x);
    const AttnWeights w = attn_weights(ckpt, p + ".self");
    TensorF q = linear_w(nx, *w.wq, *w.bq);
    TensorF k = linear_w(nx, *w.wk, *w.bk);
    TensorF v = linear_w(nx, *w.wv, *w.bv);
    for (int64_t r = 0; r < s; ++r) {
      std::copy(k.row_ptr(r), k.row_ptr(r) + k.cols(), cache.k[li].row_ptr(base + r));
      std::copy(v.row_ptr(r), v.row_ptr(r) + v.cols(), cache.v[li].row_ptr(base + r));
    }
    TensorF att = attend(q, cache.k[li], cache.v[li], cfg.n_heads, min_attend_pos, causal);
    x = add(x, linear_w(att, *w.wo, *w.bo));
    if (cfg.arch == Arch::encoder_decoder) {
      TensorF cx = norm(ckpt, p + ".lnx", x);
      TensorF cq = linear_w(cx, ckpt.tensor(p + ".cross.wq"), ckpt.tensor(p + ".cross.bq"));
      TensorF catt = attend(cq, cache.cross_k[li], cache.cross_v[li], cfg.n_heads, 0, full_cross);
      x = add(x, linear_w(catt, ckpt.tensor(p + ".cross.wo"), ckpt.tensor(p + ".cross.bo")));
    }
    x = add(x, mlp_block(ckpt, p + ".mlp", norm(ckpt, p + ".ln2", x)));
  }
  cache.filled += s;
  return x;
}

std::vector<float> head_logits(const Checkpoint& ckpt, const float* hidden) {
  const ModelConfig& cfg = ckpt.config;
  TensorF row({1, cfg.d_model}, std::vector<float>(hidden, hidden + cfg.d_model));
  TensorF nx = norm(ckpt, "ln_f", row);
  TensorF logits = linear_w(nx, ckpt.tensor("head.w"), ckpt.tensor("head.b"));
  return logits.data;
}

std::vector<float> decoder_step(const Checkpoint& ckpt, KvCache& cache, int token,
                                const TensorF* cross) {
  const ModelConfig& cfg = ckpt.config;
  if (cross != nullptr) {
    if (cfg.arch != Arch::encoder_decoder)
      throw ContractError("cross-attention input supplied to " + arch_name(cfg.arch) + " model");
    if (cache.cross_len == 0) init_cross_cache(ckpt, *cross, cache);
  }
  TensorF row = TensorF::zeros({1, cfg.d_model});
  embed_token_row(ckpt, token, cache.filled, row.data.data());
  TensorF hidden = decoder_append_rows(ckpt, cache, row);
  return head_logits(ckpt, hidden.row_ptr(0));
}

}  // namespace l2s
