#include "l2s/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "l2s/error.hpp"
#include "l2s/model.hpp"
#include "l2s/model_graph.hpp"

namespace l2s {

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::slm_baseline: return "slm_baseline";
    case TrainMode::llm2slm_full: return "llm2slm_full";
    case TrainMode::projector_only: return "projector_only";
    case TrainMode::prompt_tuning_baseline: return "prompt_tuning_baseline";
  }
  return "?";
}

TrainMode train_mode_from_name(const std::string& s) {
  if (s == "slm_baseline") return TrainMode::slm_baseline;
  if (s == "llm2slm_full") return TrainMode::llm2slm_full;
  if (s == "projector_only") return TrainMode::projector_only;
  if (s == "prompt_tuning_baseline") return TrainMode::prompt_tuning_baseline;
  throw ContractError("unknown train mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(warmup_frac > 0.0 && warmup_frac < 1.0))
    throw ContractError("warmup_frac must be in (0, 1)");
  if (total_steps < 0 || micro_batch < 1 || accumulation < 1)
    throw ContractError("bad step/batch configuration");
}

double lr_at(int64_t step, int64_t total, double base, double warmup_frac) {
  if (step < 0 || step > total) throw ContractError("lr_at: step outside [0, total]");
  const double warm = warmup_frac * static_cast<double>(total);
  if (static_cast<double>(step) <= warm)
    return warm > 0.0 ? base * static_cast<double>(step) / warm : base;
  const double progress = (static_cast<double>(step) - warm) / (static_cast<double>(total) - warm);
  return base * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

void adamw_update(float* param, const float* grad, float* m, float* v, int64_t count,
                  int64_t step, double lr, double weight_decay, const AdamwConstants& k) {
  const double bc1 = 1.0 - std::pow(k.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(k.beta2, static_cast<double>(step));
  for (int64_t i = 0; i < count; ++i) {
    const double g = grad[i];
    const double mi = k.beta1 * m[i] + (1.0 - k.beta1) * g;
    const double vi = k.beta2 * v[i] + (1.0 - k.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    const double p = param[i];
    param[i] = static_cast<float>(p - lr * weight_decay * p - lr * mhat / (std::sqrt(vhat) + k.eps));
  }
}

void save_loss_trace(const std::vector<TrainStepRecord>& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "step,lr,loss\n";
  char buf[96];
  for (const TrainStepRecord& r : trace) {
    std::snprintf(buf, sizeof buf, "%lld,%.8g,%.8g\n", static_cast<long long>(r.step), r.lr, r.loss);
    f << buf;
  }
}

namespace {

using GF = Graph<float>;
using Gid = GF::Id;

struct TokenizedExample {
  std::vector<int> prompt_ids;      // ids on the small-model input side
  std::vector<int> llm_prompt_ids;  // ids fed to the frozen encoder (may equal prompt_ids)
  std::vector<int> target_ids;      // EOS-terminated
  TensorF prompt_states;            // cached frozen encoding (bundles only)
  TensorF gathered_prompt;          // frozen source embedding rows (cross-family only)
  TensorF gathered_targets;
};

// One trainable parameter slot: the live tensor plus optimizer state.
struct ParamSlot {
  std::string name;
  TensorF* tensor;
  bool in_bridge;
  std::vector<float> grad;
  std::vector<float> m, v;
};

struct Trainer {
  std::vector<ParamSlot> slots;

  void add(const std::string& name, TensorF& t, bool in_bridge) {
    slots.push_back({name, &t, in_bridge, std::vector<float>(t.data.size(), 0.0f),
                     std::vector<float>(t.data.size(), 0.0f),
                     std::vector<float>(t.data.size(), 0.0f)});
  }

  void zero_grad() {
    for (ParamSlot& s : slots) std::fill(s.grad.begin(), s.grad.end(), 0.0f);
  }

  void clip(double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const ParamSlot& s : slots)
      for (float g : s.grad) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const float scale = static_cast<float>(max_norm / norm);
    for (ParamSlot& s : slots)
      for (float& g : s.grad) g *= scale;
  }

  void step(int64_t t, double lr, double wd) {
    for (ParamSlot& s : slots) {
      for (float g : s.grad)
        if (!std::isfinite(g))
          throw ContractError("non-finite gradient for parameter '" + s.name + "'");
      adamw_update(s.tensor->data.data(), s.grad.data(), s.m.data(), s.v.data(),
                   s.tensor->numel(), t, lr, wd);
    }
  }
};

// Target vector for a decoder-only stream of `rows` rows whose prompt
// occupies the first `prompt_rows`: row prompt_rows-1+j predicts target j.
std::vector<int> stream_targets(int64_t rows, int64_t prompt_rows, const std::vector<int>& targets) {
  std::vector<int> t(static_cast<size_t>(rows), kIgnoreId);
  for (size_t j = 0; j < targets.size(); ++j)
    t[static_cast<size_t>(prompt_rows - 1 + static_cast<int64_t>(j))] = targets[j];
  return t;
}

Gid project_graph(GF& g, const BoundParams<float>& bp, Gid h) {
  Gid mid = g.relu(g.add_bias(g.matmul(h, bp.at("proj.w1")), bp.at("proj.b1")));
  return g.add_bias(g.matmul(mid, bp.at("proj.w2")), bp.at("proj.b2"));
}

Gid embed_via_projection(GF& g, const BoundParams<float>& bridge, const TensorF& gathered,
                         const BoundParams<float>& slm, int64_t pos_offset, int64_t count) {
  Gid rows = g.add_bias(g.matmul(g.constant(gathered), bridge.at("embed_proj.w")),
                        bridge.at("embed_proj.b"));
  std::vector<int> pos_ids(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) pos_ids[static_cast<size_t>(i)] = static_cast<int>(pos_offset + i);
  return g.add(rows, g.embedding_rows(slm.at("pos_emb"), pos_ids));
}

// Loss for one example. Mirrors the inference layout exactly: decoder-only
// small models see [prompt rows; embedded targets y_1..y_{k-1}] as one causal
// stream with the loss masked to target positions; encoder-decoder small
// models encode prompt rows and teacher-force [BOS; y_1..y_{k-1}].
Gid example_loss(GF& g, const BoundParams<float>& slm, const BoundParams<float>* bridge,
                 const HybridBundle* bundle, const TokenizedExample& ex) {
  const ModelConfig& cfg = slm.ckpt->config;
  const bool cross_family = bundle && bundle->has_llm() &&
                            bundle->tokenizer_mode == TokenizerMode::llm_shared &&
                            bundle->cross_family();

  // Prompt-side rows.
  Gid prompt_rows;
  int64_t prompt_count = static_cast<int64_t>(ex.prompt_ids.size());
  if (bundle && bundle->has_llm()) {
    Gid z = project_graph(g, *bridge, g.constant(ex.prompt_states));
    if (bundle->fusion == FusionMode::replace) {
      prompt_rows = z;
      prompt_count = ex.prompt_states.rows();
    } else {
      Gid ex_rows = cross_family
                        ? embed_via_projection(g, *bridge, ex.gathered_prompt, slm, 0, prompt_count)
                        : graph_ops::embed_stream(g, slm, ex.prompt_ids, 0);
      prompt_rows = g.add(z, ex_rows);
    }
  } else if (bundle) {  // soft-prompt baseline
    Gid soft = bridge->at("soft_prompt");
    const int64_t sp_len = g.value(soft).rows();
    Gid ex_rows = graph_ops::embed_stream(g, slm, ex.prompt_ids, sp_len);
    prompt_rows = g.concat_rows({soft, ex_rows});
    prompt_count += sp_len;
  } else {
    prompt_rows = graph_ops::embed_stream(g, slm, ex.prompt_ids, 0);
  }

  const std::vector<int>& y = ex.target_ids;
  if (cfg.arch == Arch::decoder_only) {
    Gid stream = prompt_rows;
    if (y.size() > 1) {
      std::vector<int> fed(y.begin(), y.end() - 1);
      Gid target_rows =
          cross_family
              ? embed_via_projection(g, *bridge, ex.gathered_targets, slm, prompt_count,
                                     static_cast<int64_t>(fed.size()))
              : graph_ops::embed_stream(g, slm, fed, prompt_count);
      stream = g.concat_rows({prompt_rows, target_rows});
    }
    Gid hidden = graph_ops::decoder_stack<float>(g, slm, stream, std::nullopt);
    Gid nx = graph_ops::norm(g, slm, "ln_f", hidden);
    Gid logits = cross_family
                     ? g.add_bias(g.matmul(nx, bridge->at("new_head.w")), bridge->at("new_head.b"))
                     : g.add_bias(g.matmul(nx, slm.at("head.w")), slm.at("head.b"));
    return g.cross_entropy(logits, stream_targets(g.value(logits).rows(), prompt_count, y));
  }

  // Encoder-decoder small model.
  Gid cross = graph_ops::encoder_stack(g, slm, prompt_rows);
  std::vector<int> dec_stream;
  dec_stream.push_back(Vocab::kBos);
  dec_stream.insert(dec_stream.end(), y.begin(), y.end() - 1);
  Gid dec_rows;
  if (cross_family) {
    // BOS and targets are embedded through the frozen source table as well.
    const TensorF& src = bundle->llm->tensor("tok_emb");
    TensorF gathered = TensorF::zeros({static_cast<int64_t>(dec_stream.size()), src.cols()});
    for (size_t i = 0; i < dec_stream.size(); ++i)
      std::copy(src.row_ptr(dec_stream[i]), src.row_ptr(dec_stream[i]) + src.cols(),
                gathered.row_ptr(static_cast<int64_t>(i)));
    dec_rows = embed_via_projection(g, *bridge, gathered, slm, 0,
                                    static_cast<int64_t>(dec_stream.size()));
  } else {
    dec_rows = graph_ops::embed_stream(g, slm, dec_stream, 0);
  }
  Gid hidden = graph_ops::decoder_stack(g, slm, dec_rows, std::optional<Gid>(cross));
  Gid nx = graph_ops::norm(g, slm, "ln_f", hidden);
  Gid logits = cross_family
                   ? g.add_bias(g.matmul(nx, bridge->at("new_head.w")), bridge->at("new_head.b"))
                   : g.add_bias(g.matmul(nx, slm.at("head.w")), slm.at("head.b"));
  return g.cross_entropy(logits, y);
}

std::vector<TokenizedExample> tokenize_dataset(const Dataset& data, const Checkpoint* model,
                                               const HybridBundle* bundle) {
  std::vector<TokenizedExample> out;
  out.reserve(data.size());
  const bool cross_family = bundle && bundle->has_llm() &&
                            bundle->tokenizer_mode == TokenizerMode::llm_shared &&
                            bundle->cross_family();
  for (const Example& ex : data) {
    TokenizedExample tex;
    if (bundle) {
      BundleTokenization tok = bundle_tokenize_prompt(*bundle, ex.prompt);
      tex.prompt_ids = tok.slm_ids;
      tex.llm_prompt_ids = tok.llm_ids;
      tex.target_ids = bundle_output_vocab(*bundle).encode(ex.target, true);
      if (bundle->has_llm()) {
        // The frozen encoding never changes during training; compute it once.
        tex.prompt_states = encode_prompt(*bundle, tex.llm_prompt_ids).states;
      }
      if (cross_family) {
        const TensorF& src = bundle->llm->tensor("tok_emb");
        auto gather = [&](const std::vector<int>& ids) {
          TensorF rows = TensorF::zeros({static_cast<int64_t>(ids.size()), src.cols()});
          for (size_t i = 0; i < ids.size(); ++i)
            std::copy(src.row_ptr(ids[i]), src.row_ptr(ids[i]) + src.cols(),
                      rows.row_ptr(static_cast<int64_t>(i)));
          return rows;
        };
        tex.gathered_prompt = gather(tex.prompt_ids);
        if (bundle->slm->config.arch == Arch::decoder_only && tex.target_ids.size() > 1)
          tex.gathered_targets = gather(
              std::vector<int>(tex.target_ids.begin(), tex.target_ids.end() - 1));
      }
    } else {
      const Vocab vocab = Vocab::from_kind_checked(model->vocab_kind, model->config.vocab_size);
      tex.prompt_ids = vocab.encode(ex.prompt, false);
      tex.target_ids = vocab.encode(ex.target, true);
    }
    if (tex.prompt_ids.empty()) throw ContractError("train: empty prompt in dataset");
    out.push_back(std::move(tex));
  }
  return out;
}

TrainResult run_training(Checkpoint* model, HybridBundle* bundle, const Dataset& data,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ContractError("train: empty dataset");

  Checkpoint& slm = bundle ? *bundle->slm : *model;
  Checkpoint* bridge = bundle ? bundle->bridge.get() : nullptr;

  // Trainable set per mode.
  bool train_slm = false, train_bridge = false;
  switch (cfg.mode) {
    case TrainMode::slm_baseline:
      if (bundle) throw ContractError("slm_baseline mode trains a plain model, not a bundle");
      train_slm = true;
      break;
    case TrainMode::llm2slm_full:
      if (!bundle || !bundle->has_llm())
        throw ContractError("llm2slm_full mode requires a bundle with a large model");
      train_slm = train_bridge = true;
      break;
    case TrainMode::projector_only:
      if (!bundle || !bundle->has_llm())
        throw ContractError("projector_only mode requires a bundle with a large model");
      train_bridge = true;
      break;
    case TrainMode::prompt_tuning_baseline:
      if (!bundle || bundle->has_llm())
        throw ContractError("prompt_tuning_baseline mode requires a soft-prompt bundle");
      train_bridge = true;
      break;
  }

  Trainer trainer;
  if (train_slm)
    for (auto& [name, t] : slm.tensors) trainer.add(name, t, false);
  if (train_bridge && bridge)
    for (auto& [name, t] : bridge->tensors) trainer.add(name, t, true);

  const std::vector<TokenizedExample> examples = tokenize_dataset(data, model, bundle);

  TrainResult result;
  if (cfg.total_steps == 0) return result;

  Rng order_rng = Rng(cfg.seed).fork(1);
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();  // trigger shuffle on first use
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[order_rng.next_below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  const std::function<bool(const std::string&)> all = [](const std::string&) { return true; };
  const std::function<bool(const std::string&)> none;

  const int64_t batch = static_cast<int64_t>(cfg.micro_batch) * cfg.accumulation;
  for (int step = 0; step < cfg.total_steps; ++step) {
    trainer.zero_grad();
    double loss_sum = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const TokenizedExample& ex = examples[next_index()];
      GF g;
      BoundParams<float> slm_p = BoundParams<float>::bind(g, slm, train_slm ? all : none);
      BoundParams<float> bridge_p;
      if (bridge) bridge_p = BoundParams<float>::bind(g, *bridge, train_bridge ? all : none);
      Gid loss = example_loss(g, slm_p, bridge ? &bridge_p : nullptr, bundle, ex);
      loss_sum += g.value(loss).data[0];
      g.backward(loss);
      for (ParamSlot& s : trainer.slots) {
        const auto& ids = s.in_bridge ? bridge_p.ids : slm_p.ids;
        const TensorF& grad = g.grad(ids.at(s.name));
        for (size_t i = 0; i < s.grad.size(); ++i) s.grad[i] += grad.data[i];
      }
    }
    const float inv = 1.0f / static_cast<float>(batch);
    for (ParamSlot& s : trainer.slots)
      for (float& gv : s.grad) gv *= inv;
    trainer.clip(cfg.clip_norm);
    const double lr = lr_at(step, cfg.total_steps, cfg.lr_base, cfg.warmup_frac);
    trainer.step(step + 1, lr, cfg.weight_decay);
    const double mean_loss = loss_sum / static_cast<double>(batch);
    result.trace.push_back({step, lr, mean_loss});
    result.final_loss = mean_loss;
  }
  slm.step += cfg.total_steps;
  if (bridge) bridge->step += cfg.total_steps;
  return result;
}

}  // namespace

TrainResult train_model(Checkpoint& model, const Dataset& data, const TrainConfig& cfg) {
  return run_training(&model, nullptr, data, cfg);
}

TrainResult train_bundle(HybridBundle& bundle, const Dataset& data, const TrainConfig& cfg) {
  bundle.validate();
  return run_training(nullptr, &bundle, data, cfg);
}

Dataset generate_labels(const Checkpoint& model, const std::vector<std::string>& prompts,
                        const GenerationParams& params) {
  Dataset out;
  out.reserve(prompts.size());
  for (const std::string& prompt : prompts) {
    Example ex;
    ex.prompt = prompt;
    ex.target = generate_text(ModelRef(model), prompt, params);
    ex.source = "gen";
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace l2s
