#include "l2s/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "l2s/error.hpp"

namespace l2s {
namespace {

using ordered_json = nlohmann::ordered_json;

void push_attention(std::vector<TensorSpec>& out, const std::string& prefix, int64_t d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({prefix + "." + w, {d, d}});
  for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({prefix + "." + b, {d}});
}

void push_norm(std::vector<TensorSpec>& out, const std::string& name, int64_t d) {
  out.push_back({name + ".g", {d}});
  out.push_back({name + ".b", {d}});
}

void push_mlp(std::vector<TensorSpec>& out, const std::string& prefix, int64_t d, int64_t dff) {
  out.push_back({prefix + ".w1", {d, dff}});
  out.push_back({prefix + ".b1", {dff}});
  out.push_back({prefix + ".w2", {dff, d}});
  out.push_back({prefix + ".b2", {d}});
}

}  // namespace

std::vector<TensorSpec> tensor_schema(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.d_model, dff = cfg.d_ff, v = cfg.vocab_size;
  std::vector<TensorSpec> out;
  out.push_back({"tok_emb", {v, d}});
  out.push_back({"pos_emb", {cfg.max_seq_len, d}});
  const bool has_enc = cfg.arch != Arch::decoder_only;
  const bool has_dec = cfg.arch != Arch::encoder_only;
  if (has_enc) {
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "enc." + std::to_string(i);
      push_norm(out, p + ".ln1", d);
      push_attention(out, p + ".attn", d);
      push_norm(out, p + ".ln2", d);
      push_mlp(out, p + ".mlp", d, dff);
    }
    push_norm(out, "enc_ln_f", d);
  }
  if (has_dec) {
    for (int i = 0; i < cfg.n_layers; ++i) {
      const std::string p = "dec." + std::to_string(i);
      push_norm(out, p + ".ln1", d);
      push_attention(out, p + ".self", d);
      if (cfg.arch == Arch::encoder_decoder) {
        push_norm(out, p + ".lnx", d);
        push_attention(out, p + ".cross", d);
      }
      push_norm(out, p + ".ln2", d);
      push_mlp(out, p + ".mlp", d, dff);
    }
    push_norm(out, "ln_f", d);
    out.push_back({"head.w", {d, v}});
    out.push_back({"head.b", {v}});
  }
  return out;
}

const TensorF& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw ContractError("checkpoint has no tensor '" + name + "'");
}

TensorF& Checkpoint::tensor(const std::string& name) {
  for (auto& [n, t] : tensors)
    if (n == name) return t;
  throw ContractError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

void Checkpoint::validate() const {
  if (role == "bridge") return;
  const auto schema = tensor_schema(config);
  if (schema.size() != tensors.size())
    throw ContractError("checkpoint: expected " + std::to_string(schema.size()) +
                        " tensors, found " + std::to_string(tensors.size()));
  for (size_t i = 0; i < schema.size(); ++i) {
    if (tensors[i].first != schema[i].name)
      throw ContractError("checkpoint: tensor '" + tensors[i].first + "' where schema expects '" +
                          schema[i].name + "'");
    if (tensors[i].second.shape != schema[i].shape)
      throw ShapeError("checkpoint: tensor '" + schema[i].name + "' has shape " +
                       tensors[i].second.shape_str());
  }
}

Checkpoint init_checkpoint(const ModelConfig& cfg, const std::string& role, uint64_t seed,
                           const std::string& vocab_kind) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.role = role;
  ckpt.vocab_kind = vocab_kind;
  Rng rng(seed);
  for (const TensorSpec& spec : tensor_schema(cfg)) {
    TensorF t;
    if (spec.shape.size() == 1) {
      const bool is_gain = spec.name.size() >= 2 && spec.name.ends_with(".g");
      t = is_gain ? TensorF::full(spec.shape, 1.0f) : TensorF::zeros(spec.shape);
    } else {
      t = TensorF::randn(spec.shape, rng, 0.02f);
    }
    ckpt.tensors.emplace_back(spec.name, std::move(t));
  }
  return ckpt;
}

Checkpoint truncate_layers(const Checkpoint& ckpt, int kept_layers) {
  if (kept_layers < 1 || kept_layers > ckpt.config.n_layers)
    throw ContractError("truncate_layers: kept depth " + std::to_string(kept_layers) +
                        " outside [1, " + std::to_string(ckpt.config.n_layers) + "]");
  Checkpoint out;
  out.config = ckpt.config;
  out.config.n_layers = kept_layers;
  out.role = ckpt.role;
  out.vocab_kind = ckpt.vocab_kind;
  out.step = ckpt.step;
  for (const TensorSpec& spec : tensor_schema(out.config))
    out.tensors.emplace_back(spec.name, ckpt.tensor(spec.name));
  return out;
}

bool weights_equal(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.config == b.config) || a.tensors.size() != b.tensors.size()) return false;
  for (size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].first != b.tensors[i].first) return false;
    if (a.tensors[i].second.data != b.tensors[i].second.data) return false;
  }
  return true;
}

int64_t param_count(const ModelConfig& cfg, bool with_embeddings) {
  int64_t total = 0;
  for (const TensorSpec& spec : tensor_schema(cfg)) {
    if (!with_embeddings && (spec.name == "tok_emb" || spec.name == "pos_emb" ||
                             spec.name == "head.w" || spec.name == "head.b"))
      continue;
    int64_t n = 1;
    for (int64_t d : spec.shape) n *= d;
    total += n;
  }
  return total;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ordered_json header;
  header["config"] = {{"arch", arch_name(ckpt.config.arch)},
                      {"d_model", ckpt.config.d_model},
                      {"n_layers", ckpt.config.n_layers},
                      {"n_heads", ckpt.config.n_heads},
                      {"d_ff", ckpt.config.d_ff},
                      {"vocab_size", ckpt.config.vocab_size},
                      {"max_seq_len", ckpt.config.max_seq_len}};
  header["role"] = ckpt.role;
  header["vocab"] = ckpt.vocab_kind;
  header["step"] = ckpt.step;
  ordered_json dir = ordered_json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.numel() * static_cast<int64_t>(sizeof(float));
  }
  header["tensors"] = std::move(dir);
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write("L2S1", 4);
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  unsigned char lenbuf[4] = {static_cast<unsigned char>(hlen & 0xff),
                             static_cast<unsigned char>((hlen >> 8) & 0xff),
                             static_cast<unsigned char>((hlen >> 16) & 0xff),
                             static_cast<unsigned char>((hlen >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(lenbuf), 4);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, t] : ckpt.tensors)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!f) throw IoError("short write to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "L2S1", 4) != 0)
    throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  unsigned char lenbuf[4];
  f.read(reinterpret_cast<char*>(lenbuf), 4);
  const uint32_t hlen = static_cast<uint32_t>(lenbuf[0]) | (static_cast<uint32_t>(lenbuf[1]) << 8) |
                        (static_cast<uint32_t>(lenbuf[2]) << 16) |
                        (static_cast<uint32_t>(lenbuf[3]) << 24);
  std::string hs(hlen, '\0');
  f.read(hs.data(), hlen);
  if (!f) throw IoError("truncated header in '" + path + "'");
  ordered_json header = ordered_json::parse(hs);

  Checkpoint ckpt;
  const auto& c = header.at("config");
  ckpt.config.arch = arch_from_name(c.at("arch").get<std::string>());
  ckpt.config.d_model = c.at("d_model").get<int>();
  ckpt.config.n_layers = c.at("n_layers").get<int>();
  ckpt.config.n_heads = c.at("n_heads").get<int>();
  ckpt.config.d_ff = c.at("d_ff").get<int>();
  ckpt.config.vocab_size = c.at("vocab_size").get<int>();
  ckpt.config.max_seq_len = c.at("max_seq_len").get<int>();
  ckpt.role = header.at("role").get<std::string>();
  ckpt.vocab_kind = header.at("vocab").get<std::string>();
  ckpt.step = header.at("step").get<int64_t>();
  for (const auto& entry : header.at("tensors")) {
    TensorF t;
    t.shape = entry.at("shape").get<std::vector<int64_t>>();
    int64_t count = 1;
    for (int64_t d : t.shape) count *= d;
    t.data.resize(static_cast<size_t>(count));
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw IoError("truncated payload in '" + path + "'");
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  ckpt.validate();
  return ckpt;
}

namespace {

int64_t attn_row_flops(int64_t d) { return 4 * 2 * d * d; }
int64_t cross_row_flops(int64_t d) { return 2 * 2 * d * d; }  // q and output proj only
int64_t mlp_row_flops(int64_t d, int64_t dff) { return 2 * d * dff + 2 * dff * d; }

int64_t enc_row(const ModelConfig& cfg) {
  return cfg.n_layers * (attn_row_flops(cfg.d_model) + mlp_row_flops(cfg.d_model, cfg.d_ff));
}

int64_t dec_row_core(const ModelConfig& cfg) {
  int64_t per_layer = attn_row_flops(cfg.d_model) + mlp_row_flops(cfg.d_model, cfg.d_ff);
  if (cfg.arch == Arch::encoder_decoder) per_layer += cross_row_flops(cfg.d_model);
  return cfg.n_layers * per_layer;
}

int64_t head_flops(const ModelConfig& cfg) { return 2 * cfg.d_model * cfg.vocab_size; }

}  // namespace

int64_t flops_per_decode_token(const ModelConfig& cfg) {
  if (cfg.arch == Arch::encoder_only)
    throw ContractError("flops_per_decode_token: encoder-only models do not decode");
  return dec_row_core(cfg) + head_flops(cfg);
}

// Work before the first decode step. Decoder-only models prefill the first
// m-1 prompt rows; the final prompt row is fed as the first decode step so
// every emitted token costs exactly one step. Encoder-decoder models run the
// encoder over all m rows and precompute per-layer cross K/V.
int64_t flops_prefill(const ModelConfig& cfg, int64_t m) {
  switch (cfg.arch) {
    case Arch::encoder_only: return m * enc_row(cfg);
    case Arch::decoder_only: return (m - 1) * dec_row_core(cfg);
    case Arch::encoder_decoder:
      return m * enc_row(cfg) + cfg.n_layers * 2 * 2 * m * cfg.d_model * cfg.d_model;
  }
  return 0;
}

int64_t flops_generate(const ModelConfig& cfg, int64_t m, int64_t n, bool cached) {
  if (m < 0 || n < 0) throw ContractError("flops_generate: negative length");
  if (n == 0) return flops_prefill(cfg, m);
  if (cached) return flops_prefill(cfg, m) + n * flops_per_decode_token(cfg);
  // Without a KV cache, step i re-runs the decoder over the whole prefix.
  int64_t total = 0;
  if (cfg.arch == Arch::encoder_decoder) {
    total += m * enc_row(cfg) + cfg.n_layers * 2 * 2 * m * cfg.d_model * cfg.d_model;
    for (int64_t i = 1; i <= n; ++i) total += i * dec_row_core(cfg) + head_flops(cfg);
  } else {
    for (int64_t i = 1; i <= n; ++i) total += (m - 1 + i) * dec_row_core(cfg) + head_flops(cfg);
  }
  return total;
}

}  // namespace l2s
