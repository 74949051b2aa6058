#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "grad_check.hpp"
#include "l2s/checkpoint.hpp"
#include "l2s/model.hpp"
#include "l2s/model_graph.hpp"
#include "l2s/tokenizer.hpp"
#include "oracle_forward.hpp"

using namespace l2s;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_encoder() {
  ModelConfig cfg;
  cfg.arch = Arch::encoder_only;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = 32;
  cfg.max_seq_len = 32;
  return cfg;
}

ModelConfig tiny_decoder(int layers = 1) {
  ModelConfig cfg;
  cfg.arch = Arch::decoder_only;
  cfg.d_model = 8;
  cfg.n_layers = layers;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = 32;
  cfg.max_seq_len = 64;
  return cfg;
}

ModelConfig tiny_encdec(int layers = 2) {
  ModelConfig cfg;
  cfg.arch = Arch::encoder_decoder;
  cfg.d_model = 16;
  cfg.n_layers = layers;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.vocab_size = 32;
  cfg.max_seq_len = 64;
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint save/load round trip is byte-identical") {
  const Checkpoint ckpt = init_checkpoint(tiny_encdec(), "slm", 3);
  const fs::path dir = fs::temp_directory_path() / "l2s_ckpt_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.l2s").string();
  const std::string p2 = (dir / "b.l2s").string();
  save_checkpoint(ckpt, p1);
  Checkpoint loaded = load_checkpoint(p1);
  save_checkpoint(loaded, p2);
  CHECK(read_file(p1) == read_file(p2));
  CHECK(loaded.config == ckpt.config);
  for (size_t i = 0; i < ckpt.tensors.size(); ++i) {
    CHECK(loaded.tensors[i].first == ckpt.tensors[i].first);
    CHECK(loaded.tensors[i].second.data == ckpt.tensors[i].second.data);
  }
  fs::remove_all(dir);
}

TEST_CASE("layer truncation keeps the lowest blocks bit-for-bit") {
  const Checkpoint ckpt = init_checkpoint(tiny_decoder(4), "slm", 9);

  SUBCASE("full depth is the identity") {
    const Checkpoint same = truncate_layers(ckpt, 4);
    REQUIRE(same.tensors.size() == ckpt.tensors.size());
    for (size_t i = 0; i < ckpt.tensors.size(); ++i)
      CHECK(same.tensors[i].second.data == ckpt.tensors[i].second.data);
  }
  SUBCASE("depth 1 matches the 1-layer closed form") {
    const Checkpoint cut = truncate_layers(ckpt, 1);
    ModelConfig one = tiny_decoder(1);
    CHECK(cut.config.n_layers == 1);
    CHECK(param_count(cut.config) == param_count(one));
    CHECK(param_count(cut.config, true) == param_count(one, true));
    CHECK(cut.tensor("dec.0.self.wq").data == ckpt.tensor("dec.0.self.wq").data);
    CHECK(cut.tensor("tok_emb").data == ckpt.tensor("tok_emb").data);
  }
  SUBCASE("out-of-range depth rejected") {
    CHECK_THROWS_AS(truncate_layers(ckpt, 0), ContractError);
    CHECK_THROWS_AS(truncate_layers(ckpt, 5), ContractError);
  }
}

TEST_CASE("param_count closed form") {
  const ModelConfig cfg = tiny_decoder(2);
  const int64_t d = cfg.d_model, dff = cfg.d_ff, v = cfg.vocab_size;
  // per layer: 2 norms (2d each) + qkvo (4d^2 + 4d) + mlp (2*d*dff + dff + d)
  const int64_t per_layer = 2 * 2 * d + 4 * d * d + 4 * d + 2 * d * dff + dff + d;
  const int64_t expected = 2 * per_layer + 2 * d;  // + final norm
  CHECK(param_count(cfg, false) == expected);
  CHECK(param_count(cfg, true) == expected + v * d + cfg.max_seq_len * d + d * v + v);
}

TEST_CASE("encoder forward matches the straight-line oracle") {
  const Checkpoint ckpt = init_checkpoint(tiny_encoder(), "llm", 0);
  const std::vector<int> tokens = {3, 4};
  const TensorF h = encoder_forward(ckpt, tokens);
  const testing::Mat ref = testing::oracle_encoder_forward(ckpt, tokens);
  REQUIRE(h.rows() == 2);
  REQUIRE(h.cols() == 8);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 8; ++j)
      CHECK(h.at(i, j) == doctest::Approx(ref[static_cast<size_t>(i)][static_cast<size_t>(j)])
                              .epsilon(1e-4));

  SUBCASE("golden values recorded from the oracle") {
    const float row0[8] = {0.654934f, -0.755125f, 1.187697f, -1.642097f,
                           0.186143f, -0.591846f, -0.496158f, 1.456452f};
    const float row1[8] = {-1.144063f, -0.757554f, -1.116368f, -0.197020f,
                           1.028275f, -0.270968f, 0.718489f, 1.739209f};
    for (int64_t j = 0; j < 8; ++j) {
      CHECK(h.at(0, j) == doctest::Approx(row0[j]).epsilon(1e-5));
      CHECK(h.at(1, j) == doctest::Approx(row1[j]).epsilon(1e-5));
    }
  }

  SUBCASE("bitwise deterministic") {
    const TensorF again = encoder_forward(ckpt, tokens);
    CHECK(again.data == h.data);
  }
  SUBCASE("bidirectionality witness: swapping tokens changes both rows") {
    const TensorF swapped = encoder_forward(ckpt, {4, 3});
    bool row0_changed = false, row1_changed = false;
    for (int64_t j = 0; j < 8; ++j) {
      row0_changed = row0_changed || swapped.at(0, j) != h.at(0, j);
      row1_changed = row1_changed || swapped.at(1, j) != h.at(1, j);
    }
    CHECK(row0_changed);
    CHECK(row1_changed);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(encoder_forward(ckpt, {}), ContractError);
    CHECK_THROWS_AS(encoder_forward(ckpt, std::vector<int>(33, 1)), ContractError);
  }
}

TEST_CASE("decoder-only single step matches the oracle") {
  const Checkpoint ckpt = init_checkpoint(tiny_decoder(1), "slm", 0);
  KvCache cache = KvCache::for_model(ckpt.config);
  const std::vector<float> logits = decoder_step(ckpt, cache, Vocab::kBos);
  const testing::Mat ref = testing::oracle_decoder_logits(ckpt, {Vocab::kBos}, nullptr);
  REQUIRE(logits.size() == 32);
  for (size_t j = 0; j < logits.size(); ++j)
    CHECK(logits[j] == doctest::Approx(ref[0][j]).epsilon(1e-4));

  SUBCASE("golden logits recorded from the oracle") {
    const float golden[8] = {-0.074205f, 0.064360f, -0.023521f, -0.024539f,
                             0.034459f,  0.014256f, 0.053168f,  0.058535f};
    for (size_t j = 0; j < 8; ++j) CHECK(logits[j] == doctest::Approx(golden[j]).epsilon(1e-5));
  }

  SUBCASE("cross input rejected for decoder-only") {
    KvCache c2 = KvCache::for_model(ckpt.config);
    TensorF cross = TensorF::zeros({2, 8});
    CHECK_THROWS_AS(decoder_step(ckpt, c2, 1, &cross), ContractError);
  }
}

TEST_CASE("incremental decoding equals full forward row by row") {
  SUBCASE("decoder-only") {
    const Checkpoint ckpt = init_checkpoint(tiny_decoder(2), "slm", 17);
    const std::vector<int> prompt = {5, 9, 14};
    const std::vector<int> targets = {7, 21, 3, 2};
    const TensorF full = full_forward<float>(ckpt, prompt, targets);

    KvCache cache = KvCache::for_model(ckpt.config);
    TensorF rows = TensorF::zeros({2, ckpt.config.d_model});
    for (int i = 0; i < 2; ++i) embed_token_row(ckpt, prompt[static_cast<size_t>(i)], i, rows.row_ptr(i));
    decoder_append_rows(ckpt, cache, rows);
    std::vector<float> logits = decoder_step(ckpt, cache, prompt[2]);
    for (size_t t = 0; t < targets.size(); ++t) {
      for (size_t j = 0; j < logits.size(); ++j)
        CHECK(logits[j] == doctest::Approx(full.at(static_cast<int64_t>(t), static_cast<int64_t>(j)))
                               .epsilon(1e-4));
      if (t + 1 < targets.size()) logits = decoder_step(ckpt, cache, targets[t]);
    }
  }
  SUBCASE("encoder-decoder") {
    const Checkpoint ckpt = init_checkpoint(tiny_encdec(2), "slm", 23);
    const std::vector<int> prompt = {4, 8, 15, 16};
    const std::vector<int> targets = {23, 11, 2};
    const TensorF full = full_forward<float>(ckpt, prompt, targets);

    const TensorF enc = encoder_forward(ckpt, prompt);
    KvCache cache = KvCache::for_model(ckpt.config);
    std::vector<float> logits = decoder_step(ckpt, cache, Vocab::kBos, &enc);
    for (size_t t = 0; t < targets.size(); ++t) {
      for (size_t j = 0; j < logits.size(); ++j)
        CHECK(logits[j] == doctest::Approx(full.at(static_cast<int64_t>(t), static_cast<int64_t>(j)))
                               .epsilon(1e-4));
      if (t + 1 < targets.size()) logits = decoder_step(ckpt, cache, targets[t]);
    }
  }
  SUBCASE("zero-length target") {
    const Checkpoint ckpt = init_checkpoint(tiny_decoder(1), "slm", 2);
    const TensorF full = full_forward<float>(ckpt, {3, 4}, {});
    CHECK(full.rows() == 0);
  }
}

TEST_CASE("KV cache equivalence on random models, n up to 64") {
  Rng rng(99);
  for (uint64_t seed = 0; seed < 3; ++seed) {
    ModelConfig cfg = tiny_decoder(2);
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.max_seq_len = 96;
    const Checkpoint ckpt = init_checkpoint(cfg, "slm", seed);
    std::vector<int> prompt = {static_cast<int>(3 + rng.next_below(20))};
    std::vector<int> targets;
    for (int i = 0; i < 64; ++i) targets.push_back(static_cast<int>(3 + rng.next_below(29)));
    const TensorF full = full_forward<float>(ckpt, prompt, targets);

    KvCache cache = KvCache::for_model(cfg);
    TensorF row = TensorF::zeros({1, cfg.d_model});
    embed_token_row(ckpt, prompt[0], 0, row.data.data());
    TensorF hidden = decoder_append_rows(ckpt, cache, row);
    std::vector<float> logits = head_logits(ckpt, hidden.row_ptr(0));
    float max_diff = 0.0f;
    for (size_t t = 0; t < targets.size(); ++t) {
      for (size_t j = 0; j < logits.size(); ++j)
        max_diff = std::max(max_diff,
                            std::abs(logits[j] - full.at(static_cast<int64_t>(t), static_cast<int64_t>(j))));
      if (t + 1 < targets.size()) logits = decoder_step(ckpt, cache, targets[t]);
    }
    CHECK(max_diff < 1e-4f);
  }
}

TEST_CASE("causal masking is bitwise") {
  const Checkpoint ckpt = init_checkpoint(tiny_decoder(2), "slm", 31);
  const std::vector<int> prompt = {6};
  std::vector<int> targets = {10, 11, 12, 13, 14, 15};
  const TensorF base = full_forward<float>(ckpt, prompt, targets);
  // Perturb the last fed target token; logits at earlier positions must not
  // move by a single bit.
  std::vector<int> perturbed = targets;
  perturbed[4] = 25;  // alters stream row 5, visible only to positions >= 5
  const TensorF changed = full_forward<float>(ckpt, prompt, perturbed);
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < base.cols(); ++j) CHECK(base.at(i, j) == changed.at(i, j));
}

TEST_CASE("gradient through full forward matches finite differences") {
  // Differentiable teacher-forced loss on a 1-layer decoder; every weight
  // participates via the bound-parameter tape.
  ModelConfig cfg = tiny_decoder(1);
  cfg.d_model = 6;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  cfg.vocab_size = 11;
  cfg.max_seq_len = 16;
  const Checkpoint ckpt = init_checkpoint(cfg, "slm", 13);
  const std::vector<int> stream = {3, 5, 7, 9};
  const std::vector<int> targets = {5, 7, 9, 2};

  // Double-valued parameter bank so finite-difference probes stay exact.
  std::vector<std::pair<std::string, TensorD>> bank;
  for (const auto& [name, t] : ckpt.tensors) bank.emplace_back(name, cast_tensor<float, double>(t));
  auto bind_bank = [&](GraphD& g2, bool trainable) {
    BoundParams<double> p2;
    p2.ckpt = &ckpt;
    for (const auto& [name, t] : bank)
      p2.ids[name] = trainable ? g2.leaf(t) : g2.constant(t);
    return p2;
  };
  auto eval_loss = [&](GraphD& g2, BoundParams<double>& p2) {
    auto r2 = graph_ops::embed_stream(g2, p2, stream, 0);
    auto h2 = graph_ops::decoder_stack<double>(g2, p2, r2, std::nullopt);
    auto l2 = graph_ops::head(g2, p2, h2);
    return g2.cross_entropy(l2, targets);
  };

  GraphD g;
  BoundParams<double> p = bind_bank(g, true);
  auto loss = eval_loss(g, p);
  g.backward(loss);

  auto bank_tensor = [&](const std::string& name) -> TensorD& {
    for (auto& [n, t] : bank)
      if (n == name) return t;
    throw ContractError("no tensor " + name);
  };

  const double h = 1e-5;
  double max_rel = 0.0;
  for (const char* name : {"dec.0.self.wq", "dec.0.mlp.w1", "dec.0.ln1.g", "tok_emb", "head.w"}) {
    const TensorD analytic = g.grad(p.at(name));
    for (size_t probe : {size_t{0}, analytic.data.size() / 2, analytic.data.size() - 1}) {
      TensorD& param = bank_tensor(name);
      const double saved = param.data[probe];
      auto eval_at = [&](double value) {
        param.data[probe] = value;
        GraphD g2;
        BoundParams<double> p2 = bind_bank(g2, false);
        return g2.value(eval_loss(g2, p2)).data[0];
      };
      const double numeric = (eval_at(saved + h) - eval_at(saved - h)) / (2.0 * h);
      param.data[probe] = saved;
      const double a = analytic.data[probe];
      max_rel = std::max(max_rel, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3}));
    }
  }
  CHECK(max_rel < 1e-6);
}

TEST_CASE("flops closed forms") {
  const ModelConfig cfg = tiny_decoder(2);
  SUBCASE("n = 0 is prefill only") {
    CHECK(flops_generate(cfg, 10, 0) == flops_prefill(cfg, 10));
  }
  SUBCASE("doubling n doubles the decode term exactly") {
    const int64_t d1 = flops_generate(cfg, 10, 16) - flops_generate(cfg, 10, 0);
    const int64_t d2 = flops_generate(cfg, 10, 32) - flops_generate(cfg, 10, 0);
    CHECK(d2 == 2 * d1);
  }
  SUBCASE("decode slope independent of m") {
    const int64_t slope_a = flops_generate(cfg, 4, 8) - flops_generate(cfg, 4, 0);
    const int64_t slope_b = flops_generate(cfg, 40, 8) - flops_generate(cfg, 40, 0);
    CHECK(slope_a == slope_b);
  }
  SUBCASE("instrumented counter equals the closed form") {
    const Checkpoint ckpt = init_checkpoint(cfg, "slm", 44);
    const int64_t m = 7, n = 5;
    flop_counter_reset();
    KvCache cache = KvCache::for_model(cfg);
    TensorF rows = TensorF::zeros({m, cfg.d_model});
    for (int64_t i = 0; i < m; ++i) embed_token_row(ckpt, 4, i, rows.row_ptr(i));
    TensorF hidden = decoder_append_rows(ckpt, cache, rows);
    std::vector<float> logits = head_logits(ckpt, hidden.row_ptr(m - 1));
    for (int64_t i = 1; i < n; ++i) logits = decoder_step(ckpt, cache, 5);
    CHECK(flop_counter_value() == flops_generate(cfg, m, n));
  }
  SUBCASE("uncached grows superlinearly") {
    CHECK(flops_generate(cfg, 10, 16, false) > flops_generate(cfg, 10, 16, true));
  }
}

TEST_CASE("cache overflow and validation errors") {
  ModelConfig cfg = tiny_decoder(1);
  cfg.max_seq_len = 4;
  const Checkpoint ckpt = init_checkpoint(cfg, "slm", 0);
  KvCache cache = KvCache::for_model(cfg);
  for (int i = 0; i < 4; ++i) decoder_step(ckpt, cache, 3);
  CHECK_THROWS_AS(decoder_step(ckpt, cache, 3), ContractError);

  SUBCASE("validate rejects shape edits") {
    Checkpoint broken = ckpt;
    broken.tensors[2].second = TensorF::zeros({3, 3});
    CHECK_THROWS_AS(broken.validate(), std::runtime_error);
  }
}
