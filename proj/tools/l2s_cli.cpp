// l2s: synthetic-task training, decoding and benchmarking for the
// large-to-small conditioned decoding stack. Subcommands: data, train,
// generate, eval, bench, sweep, specdec, ablate.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "l2s/bench.hpp"
#include "l2s/bridge.hpp"
#include "l2s/checkpoint.hpp"
#include "l2s/dataset.hpp"
#include "l2s/decode.hpp"
#include "l2s/error.hpp"
#include "l2s/metrics.hpp"
#include "l2s/tasks.hpp"
#include "l2s/train.hpp"

namespace {

using namespace l2s;
using ordered_json = nlohmann::ordered_json;

struct CliState {
  // Shared defaults, possibly seeded from --config.
  uint64_t seed = 0;

  ModelConfig model_cfg;
  std::string vocab_kind = "byte_full";
  std::string role = "slm";

  TrainConfig train_cfg;
  GenerationParams gen;
};

// --config JSON mirrors the structured field names:
// {"model": {...}, "train": {...}, "generation": {...}, "seed": N}
void apply_config_file(CliState& st, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  ordered_json j = ordered_json::parse(f);
  if (j.contains("seed")) st.seed = j["seed"].get<uint64_t>();
  if (j.contains("model")) {
    const auto& m = j["model"];
    if (m.contains("arch")) st.model_cfg.arch = arch_from_name(m["arch"].get<std::string>());
    if (m.contains("d_model")) st.model_cfg.d_model = m["d_model"].get<int>();
    if (m.contains("n_layers")) st.model_cfg.n_layers = m["n_layers"].get<int>();
    if (m.contains("n_heads")) st.model_cfg.n_heads = m["n_heads"].get<int>();
    if (m.contains("d_ff")) st.model_cfg.d_ff = m["d_ff"].get<int>();
    if (m.contains("vocab_size")) st.model_cfg.vocab_size = m["vocab_size"].get<int>();
    if (m.contains("max_seq_len")) st.model_cfg.max_seq_len = m["max_seq_len"].get<int>();
    if (m.contains("vocab")) st.vocab_kind = m["vocab"].get<std::string>();
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    if (t.contains("lr_base")) st.train_cfg.lr_base = t["lr_base"].get<double>();
    if (t.contains("weight_decay")) st.train_cfg.weight_decay = t["weight_decay"].get<double>();
    if (t.contains("warmup_frac")) st.train_cfg.warmup_frac = t["warmup_frac"].get<double>();
    if (t.contains("total_steps")) st.train_cfg.total_steps = t["total_steps"].get<int>();
    if (t.contains("micro_batch")) st.train_cfg.micro_batch = t["micro_batch"].get<int>();
    if (t.contains("accumulation")) st.train_cfg.accumulation = t["accumulation"].get<int>();
    if (t.contains("mode")) st.train_cfg.mode = train_mode_from_name(t["mode"].get<std::string>());
    if (t.contains("label_source")) st.train_cfg.label_source = t["label_source"].get<std::string>();
    if (t.contains("clip_norm")) st.train_cfg.clip_norm = t["clip_norm"].get<double>();
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    if (g.contains("strategy")) st.gen.strategy = strategy_from_name(g["strategy"].get<std::string>());
    if (g.contains("max_new_tokens")) st.gen.max_new_tokens = g["max_new_tokens"].get<int>();
    if (g.contains("beam_width")) st.gen.beam_width = g["beam_width"].get<int>();
    if (g.contains("length_penalty")) st.gen.length_penalty = g["length_penalty"].get<double>();
    if (g.contains("top_p")) st.gen.top_p = g["top_p"].get<double>();
    if (g.contains("temperature")) st.gen.temperature = g["temperature"].get<double>();
  }
}

bool is_bundle_path(const std::string& path) {
  return std::filesystem::path(path).extension() == ".json";
}

// Owns whichever of checkpoint/bundle a path refers to.
struct LoadedModel {
  std::shared_ptr<Checkpoint> model;
  std::shared_ptr<HybridBundle> bundle;

  ModelRef ref() const {
    if (bundle) return ModelRef(*bundle);
    return ModelRef(*model);
  }
};

LoadedModel load_any(const std::string& path) {
  LoadedModel lm;
  if (is_bundle_path(path)) {
    lm.bundle = std::make_shared<HybridBundle>(load_bundle(path));
  } else {
    lm.model = std::make_shared<Checkpoint>(load_checkpoint(path));
  }
  return lm;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  for (const std::string& l : lines) f << l << "\n";
}

void write_metric_rows(const std::vector<std::tuple<std::string, double, std::string, std::string>>& rows,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "metric,value,split,config_id\n";
  char buf[256];
  for (const auto& [metric, value, split, id] : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%s,%s\n", metric.c_str(), value, split.c_str(),
                  id.c_str());
    f << buf;
  }
}

std::vector<std::string> generate_for_dataset(const ModelRef& ref, const Dataset& data,
                                              const GenerationParams& gen) {
  const Vocab vocab = ref.vocab();
  std::vector<std::string> hyps;
  hyps.reserve(data.size());
  for (const Example& ex : data) hyps.push_back(vocab.decode(generate(ref, ex.prompt, gen)));
  return hyps;
}

// --- subcommand: data ---

int cmd_data(const std::string& task, const std::string& alphabet, int min_len, int max_len,
             int noise_factor, uint64_t seed, int train_size, int test_size,
             const std::string& train_out, const std::string& test_out) {
  TaskSpec spec;
  spec.kind = task_kind_from_name(task);
  spec.alphabet = alphabet;
  spec.min_len = min_len;
  spec.max_len = max_len;
  spec.noise_factor = noise_factor;
  spec.seed = seed;
  spec.train_size = train_size;
  spec.test_size = test_size;
  const TaskData data = generate_task(spec);
  save_dataset(data.train, train_out);
  save_dataset(data.test, test_out);
  std::printf("data: wrote %zu train / %zu test examples (%s)\n", data.train.size(),
              data.test.size(), task.c_str());
  return 0;
}

// --- subcommand: train ---

struct TrainArgs {
  std::string data_path;
  std::string model_in, bundle_in;
  std::string llm_path, slm_path;
  std::string out, trace_out;
  std::string fusion = "add";
  std::string tokenizer_mode = "llm_shared";
  int extraction_layer = -1;
  int truncate = 0;
  int soft_prompt_len = 16;
  uint64_t init_seed = 0;
};

int cmd_train(CliState& st, const TrainArgs& a) {
  const Dataset data = load_dataset(a.data_path);
  st.train_cfg.seed = st.seed;
  TrainResult result;

  if (st.train_cfg.mode == TrainMode::slm_baseline) {
    Checkpoint model = a.model_in.empty()
                           ? init_checkpoint(st.model_cfg, st.role, a.init_seed, st.vocab_kind)
                           : load_checkpoint(a.model_in);
    if (a.truncate > 0) model = truncate_layers(model, a.truncate);
    result = train_model(model, data, st.train_cfg);
    if (!a.out.empty()) save_checkpoint(model, a.out);
  } else {
    HybridBundle bundle;
    if (!a.bundle_in.empty()) {
      bundle = load_bundle(a.bundle_in);
    } else {
      // The small model comes from --slm or is initialized from the model
      // flags / config section.
      bundle.slm = std::make_shared<Checkpoint>(
          a.slm_path.empty() ? init_checkpoint(st.model_cfg, "slm", a.init_seed, st.vocab_kind)
                             : load_checkpoint(a.slm_path));
      if (a.truncate > 0)
        bundle.slm = std::make_shared<Checkpoint>(truncate_layers(*bundle.slm, a.truncate));
      if (st.train_cfg.mode == TrainMode::prompt_tuning_baseline) {
        bundle.bridge = std::make_shared<Checkpoint>(
            init_soft_prompt(a.soft_prompt_len, bundle.slm->config.d_model, a.init_seed + 1));
      } else {
        if (a.llm_path.empty()) throw ContractError("train: --llm required for this mode");
        bundle.llm = std::make_shared<Checkpoint>(load_checkpoint(a.llm_path));
        bundle.fusion = fusion_from_name(a.fusion);
        bundle.tokenizer_mode = tokenizer_mode_from_name(a.tokenizer_mode);
        bundle.extraction_layer =
            bundle.llm->config.arch == Arch::decoder_only ? std::max(a.extraction_layer, 0)
                                                          : -1;
        const bool cross = bundle.llm->config.vocab_size != bundle.slm->config.vocab_size ||
                           bundle.llm->vocab_kind != bundle.slm->vocab_kind;
        bundle.bridge = std::make_shared<Checkpoint>(init_bridge(
            bundle.llm->config.d_model, bundle.slm->config.d_model, a.init_seed + 1,
            cross && bundle.tokenizer_mode == TokenizerMode::llm_shared,
            bundle.llm->config.vocab_size));
      }
      bundle.validate();
    }
    result = train_bundle(bundle, data, st.train_cfg);
    if (!a.out.empty()) save_bundle(bundle, a.out);
  }

  if (!a.trace_out.empty()) save_loss_trace(result.trace, a.trace_out);
  std::printf("train: %d steps, final loss %.4f\n", st.train_cfg.total_steps, result.final_loss);
  return 0;
}

// --- subcommand: generate ---

int cmd_generate(CliState& st, const std::string& model_path, const std::string& prompt,
                 const std::string& data_path, const std::string& out) {
  st.gen.seed = st.seed;
  const LoadedModel lm = load_any(model_path);
  if (!data_path.empty()) {
    const Dataset data = load_dataset(data_path);
    const std::vector<std::string> hyps = generate_for_dataset(lm.ref(), data, st.gen);
    if (out.empty()) throw ContractError("generate: --out required with --data");
    write_lines(hyps, out);
    std::printf("generate: %zu hypotheses -> %s\n", hyps.size(), out.c_str());
    return 0;
  }
  if (prompt.empty()) throw ContractError("generate: provide --prompt or --data");
  const std::string text = generate_text(lm.ref(), prompt, st.gen);
  if (!out.empty()) write_lines({text}, out);
  std::printf("%s\n", text.c_str());
  return 0;
}

// --- subcommand: eval ---

int cmd_eval(const std::string& hyp_path, const std::string& ref_path,
             const std::string& data_path, const std::string& split, const std::string& config_id,
             const std::string& out) {
  const std::vector<std::string> hyps = read_lines(hyp_path);
  std::vector<std::string> refs;
  if (!ref_path.empty()) {
    refs = read_lines(ref_path);
  } else if (!data_path.empty()) {
    for (const Example& ex : load_dataset(data_path)) refs.push_back(ex.target);
  } else {
    throw ContractError("eval: provide --ref or --data");
  }
  if (hyps.size() != refs.size())
    throw ContractError("eval: " + std::to_string(hyps.size()) + " hypotheses vs " +
                        std::to_string(refs.size()) + " references");

  const double bleu = corpus_bleu(hyps, refs);
  double rouge = 0.0;
  for (size_t i = 0; i < hyps.size(); ++i) rouge += rouge_l(hyps[i], refs[i]);
  rouge /= static_cast<double>(hyps.size());
  const double em = exact_match(hyps, refs);

  std::vector<std::tuple<std::string, double, std::string, std::string>> rows = {
      {"bleu", bleu, split, config_id},
      {"rouge_l", rouge, split, config_id},
      {"exact_match", em, split, config_id},
  };
  if (!out.empty()) write_metric_rows(rows, out);
  std::printf("eval: bleu %.4f rouge_l %.4f exact_match %.4f (%zu pairs)\n", bleu, rouge, em,
              hyps.size());
  return 0;
}

// --- subcommands: bench / sweep ---

int cmd_bench(const std::string& model_path, const std::string& config_id, int64_t m, int64_t n,
              int reps, int warmup, uint64_t prompt_seed, const std::string& out) {
  const LoadedModel lm = load_any(model_path);
  const BenchRecord rec =
      measure(lm.ref(), config_id.empty() ? model_path : config_id, m, n, reps, warmup, prompt_seed);
  if (!out.empty()) save_bench_csv({rec}, out);
  std::printf("bench: %s m=%lld n=%lld ms/token %.4f total %.2f ms flops %lld%s\n",
              rec.config_id.c_str(), static_cast<long long>(rec.m), static_cast<long long>(rec.n),
              rec.ms_per_token, rec.total_ms, static_cast<long long>(rec.flops_total),
              rec.cv_warn ? " [high variance]" : "");
  return 0;
}

int cmd_sweep(const std::vector<std::string>& model_paths, const std::vector<int64_t>& n_values,
              int64_t m, int reps, int warmup, uint64_t prompt_seed, const std::string& out) {
  std::vector<LoadedModel> loaded;
  std::vector<std::pair<std::string, ModelRef>> models;
  for (const std::string& p : model_paths) {
    loaded.push_back(load_any(p));
    models.emplace_back(std::filesystem::path(p).stem().string(), loaded.back().ref());
  }
  const std::vector<BenchRecord> rows = sweep(models, n_values, m, reps, warmup, prompt_seed);
  save_bench_csv(rows, out);
  // Costlier models must cost more per token in FLOPs; wall clock is
  // expected to follow but only flagged when it inverts.
  for (const BenchRecord& a : rows)
    for (const BenchRecord& b : rows)
      if (a.n == b.n && a.flops_per_token > b.flops_per_token &&
          a.ms_per_token < b.ms_per_token)
        std::printf("note: wall-clock inversion at n=%lld: %s (%.0f flops/token) ran faster than %s (%.0f)\n",
                    static_cast<long long>(a.n), a.config_id.c_str(), a.flops_per_token,
                    b.config_id.c_str(), b.flops_per_token);
  std::printf("sweep: %zu records -> %s\n", rows.size(), out.c_str());
  return 0;
}

// --- subcommand: specdec ---

int cmd_specdec(CliState& st, const std::string& target_path, const std::string& draft_path,
                const std::string& prompt, const std::string& data_path, int gamma,
                const std::string& out) {
  st.gen.seed = st.seed;
  const Checkpoint target = load_checkpoint(target_path);
  const LoadedModel draft = load_any(draft_path);
  SpecDecParams sd;
  sd.draft_len = gamma;

  std::vector<std::string> prompts;
  if (!data_path.empty()) {
    for (const Example& ex : load_dataset(data_path)) prompts.push_back(ex.prompt);
  } else if (!prompt.empty()) {
    prompts.push_back(prompt);
  } else {
    throw ContractError("specdec: provide --prompt or --data");
  }

  std::ofstream csv;
  if (!out.empty()) {
    csv.open(out);
    if (!csv) throw IoError("cannot open '" + out + "' for writing");
    csv << "prompt_index,gamma,proposed,accepted,acceptance_rate,target_passes,emitted\n";
  }
  const Vocab vocab = Vocab::from_kind_checked(target.vocab_kind, target.config.vocab_size);
  int64_t total_passes = 0, total_emitted = 0, total_proposed = 0, total_accepted = 0;
  for (size_t i = 0; i < prompts.size(); ++i) {
    SpecStats stats;
    const std::vector<int> ids =
        speculative_generate(target, draft.ref(), prompts[i], sd, st.gen, &stats);
    total_passes += stats.target_passes;
    total_emitted += stats.emitted;
    total_proposed += stats.proposed;
    total_accepted += stats.accepted;
    if (csv.is_open()) {
      char buf[192];
      std::snprintf(buf, sizeof buf, "%zu,%d,%lld,%lld,%.6f,%lld,%lld\n", i, gamma,
                    static_cast<long long>(stats.proposed), static_cast<long long>(stats.accepted),
                    stats.acceptance_rate(), static_cast<long long>(stats.target_passes),
                    static_cast<long long>(stats.emitted));
      csv << buf;
    }
    if (prompts.size() == 1) std::printf("%s\n", vocab.decode(ids).c_str());
  }
  const double rate =
      total_proposed > 0 ? static_cast<double>(total_accepted) / static_cast<double>(total_proposed) : 0.0;
  std::printf("specdec: gamma=%d acceptance %.4f target passes %lld for %lld tokens\n", gamma,
              rate, static_cast<long long>(total_passes), static_cast<long long>(total_emitted));
  return 0;
}

// --- subcommand: ablate ---

struct AblateArgs {
  std::string mode;  // truncate | extraction | fusion
  std::string train_path, test_path;
  std::string llm_path;
  std::string slm_path;  // initial (untrained) small model
  std::vector<int> depths = {1, 2, 4};
  std::vector<int> layers = {0, 1};
  std::string out;
};

int cmd_ablate(CliState& st, const AblateArgs& a) {
  const Dataset train_set = load_dataset(a.train_path);
  const Dataset test_set = load_dataset(a.test_path);
  st.train_cfg.seed = st.seed;
  if (st.train_cfg.mode != TrainMode::llm2slm_full && st.train_cfg.mode != TrainMode::projector_only)
    st.train_cfg.mode = TrainMode::llm2slm_full;
  const auto llm = std::make_shared<Checkpoint>(load_checkpoint(a.llm_path));
  const Checkpoint slm_init = load_checkpoint(a.slm_path);

  std::vector<std::string> refs;
  for (const Example& ex : test_set) refs.push_back(ex.target);

  std::vector<std::tuple<std::string, double, std::string, std::string>> rows;
  auto eval_into = [&](const ModelRef& ref, const std::string& id) {
    const std::vector<std::string> hyps = generate_for_dataset(ref, test_set, st.gen);
    rows.emplace_back("exact_match", exact_match(hyps, refs), "test", id);
    rows.emplace_back("bleu", corpus_bleu(hyps, refs), "test", id);
  };
  auto make_hybrid = [&](const Checkpoint& slm, int extraction) {
    HybridBundle b;
    b.llm = llm;
    b.slm = std::make_shared<Checkpoint>(slm);
    const bool cross = llm->config.vocab_size != slm.config.vocab_size ||
                       llm->vocab_kind != slm.vocab_kind;
    b.bridge = std::make_shared<Checkpoint>(init_bridge(llm->config.d_model, slm.config.d_model,
                                                        st.seed + 17, cross,
                                                        llm->config.vocab_size));
    b.fusion = FusionMode::add;
    b.extraction_layer = llm->config.arch == Arch::decoder_only ? extraction : -1;
    b.validate();
    return b;
  };

  if (a.mode == "truncate") {
    for (int depth : a.depths) {
      Checkpoint slm = truncate_layers(slm_init, depth);
      TrainConfig base_cfg = st.train_cfg;
      base_cfg.mode = TrainMode::slm_baseline;
      train_model(slm, train_set, base_cfg);
      eval_into(ModelRef(slm), "slm_d" + std::to_string(depth));

      HybridBundle hybrid = make_hybrid(truncate_layers(slm_init, depth),
                                        llm->config.arch == Arch::decoder_only ? 1 : -1);
      train_bundle(hybrid, train_set, st.train_cfg);
      eval_into(ModelRef(hybrid), "llm2slm_d" + std::to_string(depth));
    }
  } else if (a.mode == "extraction") {
    if (llm->config.arch != Arch::decoder_only)
      throw ContractError("ablate extraction: the large model must be decoder-only");
    for (int layer : a.layers) {
      HybridBundle hybrid = make_hybrid(slm_init, layer);
      train_bundle(hybrid, train_set, st.train_cfg);
      eval_into(ModelRef(hybrid), "llm2slm_layer" + std::to_string(layer));
    }
  } else if (a.mode == "fusion") {
    for (FusionMode fusion : {FusionMode::add, FusionMode::replace}) {
      HybridBundle hybrid = make_hybrid(slm_init, llm->config.arch == Arch::decoder_only ? 1 : -1);
      hybrid.fusion = fusion;
      train_bundle(hybrid, train_set, st.train_cfg);
      eval_into(ModelRef(hybrid), "llm2slm_" + fusion_name(fusion));
    }
  } else {
    throw ContractError("ablate: unknown mode '" + a.mode + "'");
  }

  write_metric_rows(rows, a.out);
  std::printf("ablate: %zu result rows -> %s\n", rows.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"large-to-small conditioned decoding toolkit"};
  app.require_subcommand(1);

  CliState st;
  std::string config_path;

  // Pre-scan for --config so its values become the defaults flags override.
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  try {
    if (!config_path.empty()) apply_config_file(st, config_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  auto add_common_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config with model/train/generation sections");
    cmd->add_option("--seed", st.seed, "global seed");
  };
  auto add_model_flags = [&](CLI::App* cmd) {
    std::string arch = arch_name(st.model_cfg.arch);
    cmd->add_option_function<std::string>(
        "--arch", [&st](const std::string& v) { st.model_cfg.arch = arch_from_name(v); },
        "encoder_only | encoder_decoder | decoder_only");
    cmd->add_option("--d-model", st.model_cfg.d_model);
    cmd->add_option("--n-layers", st.model_cfg.n_layers);
    cmd->add_option("--n-heads", st.model_cfg.n_heads);
    cmd->add_option("--d-ff", st.model_cfg.d_ff);
    cmd->add_option("--vocab-size", st.model_cfg.vocab_size);
    cmd->add_option("--max-seq-len", st.model_cfg.max_seq_len);
    cmd->add_option("--vocab", st.vocab_kind, "byte_full | byte64");
    cmd->add_option("--role", st.role, "llm | slm");
  };
  auto add_gen_flags = [&](CLI::App* cmd) {
    cmd->add_option_function<std::string>(
        "--strategy", [&st](const std::string& v) { st.gen.strategy = strategy_from_name(v); },
        "greedy | nucleus | beam");
    cmd->add_option("--max-new-tokens", st.gen.max_new_tokens);
    cmd->add_option("--beam-width", st.gen.beam_width);
    cmd->add_option("--length-penalty", st.gen.length_penalty);
    cmd->add_option("--top-p", st.gen.top_p);
    cmd->add_option("--temperature", st.gen.temperature);
  };
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option_function<std::string>(
        "--mode", [&st](const std::string& v) { st.train_cfg.mode = train_mode_from_name(v); },
        "slm_baseline | llm2slm_full | projector_only | prompt_tuning_baseline");
    cmd->add_option("--steps", st.train_cfg.total_steps);
    cmd->add_option("--micro-batch", st.train_cfg.micro_batch);
    cmd->add_option("--accumulation", st.train_cfg.accumulation);
    cmd->add_option("--lr", st.train_cfg.lr_base);
    cmd->add_option("--weight-decay", st.train_cfg.weight_decay);
    cmd->add_option("--warmup-frac", st.train_cfg.warmup_frac);
    cmd->add_option("--clip-norm", st.train_cfg.clip_norm);
    cmd->add_option("--label-source", st.train_cfg.label_source, "gt | gen");
  };

  // data
  auto* data_cmd = app.add_subcommand("data", "generate a synthetic task dataset");
  add_common_flags(data_cmd);
  std::string task = "reversal_translation", alphabet = "abcdefghijklmnopqrstuvwxyz";
  int min_len = 4, max_len = 8, noise_factor = 2, train_size = 256, test_size = 64;
  std::string train_out = "train.jsonl", test_out = "test.jsonl";
  data_cmd->add_option("--task", task);
  data_cmd->add_option("--alphabet", alphabet);
  data_cmd->add_option("--min-len", min_len);
  data_cmd->add_option("--max-len", max_len);
  data_cmd->add_option("--noise-factor", noise_factor);
  data_cmd->add_option("--train-size", train_size);
  data_cmd->add_option("--test-size", test_size);
  data_cmd->add_option("--train-out", train_out);
  data_cmd->add_option("--test-out", test_out);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model or bundle");
  add_common_flags(train_cmd);
  TrainArgs ta;
  train_cmd->add_option("--data", ta.data_path)->required();
  train_cmd->add_option("--model", ta.model_in, "existing checkpoint to continue training");
  train_cmd->add_option("--bundle", ta.bundle_in, "existing bundle manifest");
  train_cmd->add_option("--llm", ta.llm_path);
  train_cmd->add_option("--slm", ta.slm_path);
  train_cmd->add_option("--out", ta.out);
  train_cmd->add_option("--trace", ta.trace_out);
  train_cmd->add_option("--fusion", ta.fusion, "add | replace");
  train_cmd->add_option("--tokenizer-mode", ta.tokenizer_mode, "llm_shared | slm_native");
  train_cmd->add_option("--extraction-layer", ta.extraction_layer);
  train_cmd->add_option("--truncate", ta.truncate, "keep only the lowest N layers");
  train_cmd->add_option("--soft-prompt-len", ta.soft_prompt_len);
  train_cmd->add_option("--init-seed", ta.init_seed);
  add_model_flags(train_cmd);
  add_train_flags(train_cmd);

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "decode from a model or bundle");
  add_common_flags(gen_cmd);
  std::string gen_model, gen_prompt, gen_data, gen_out;
  gen_cmd->add_option("--model", gen_model)->required();
  gen_cmd->add_option("--prompt", gen_prompt);
  gen_cmd->add_option("--data", gen_data, "JSONL dataset; decodes every prompt");
  gen_cmd->add_option("--out", gen_out);
  add_gen_flags(gen_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score hypotheses against references");
  add_common_flags(eval_cmd);
  std::string ev_hyp, ev_ref, ev_data, ev_split = "test", ev_id = "default", ev_out;
  eval_cmd->add_option("--hyp", ev_hyp)->required();
  eval_cmd->add_option("--ref", ev_ref);
  eval_cmd->add_option("--data", ev_data, "JSONL dataset supplying references");
  eval_cmd->add_option("--split", ev_split);
  eval_cmd->add_option("--config-id", ev_id);
  eval_cmd->add_option("--out", ev_out);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "measure ms/token and FLOPs");
  add_common_flags(bench_cmd);
  std::string bench_model, bench_id, bench_out;
  int64_t bench_m = 100, bench_n = 100;
  int bench_reps = 5, bench_warmup = 2;
  uint64_t bench_prompt_seed = 0;
  bench_cmd->add_option("--model", bench_model)->required();
  bench_cmd->add_option("--config-id", bench_id);
  bench_cmd->add_option("--m", bench_m);
  bench_cmd->add_option("--n", bench_n);
  bench_cmd->add_option("--reps", bench_reps);
  bench_cmd->add_option("--warmup", bench_warmup);
  bench_cmd->add_option("--prompt-seed", bench_prompt_seed);
  bench_cmd->add_option("--out", bench_out);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "bench a model grid over generation lengths");
  add_common_flags(sweep_cmd);
  std::vector<std::string> sweep_models;
  std::vector<int64_t> sweep_ns = {25, 50, 100, 200};
  int64_t sweep_m = 100;
  int sweep_reps = 5, sweep_warmup = 2;
  uint64_t sweep_prompt_seed = 0;
  std::string sweep_out = "sweep.csv";
  sweep_cmd->add_option("--models", sweep_models)->required()->delimiter(',');
  sweep_cmd->add_option("--n-values", sweep_ns)->delimiter(',');
  sweep_cmd->add_option("--m", sweep_m);
  sweep_cmd->add_option("--reps", sweep_reps);
  sweep_cmd->add_option("--warmup", sweep_warmup);
  sweep_cmd->add_option("--prompt-seed", sweep_prompt_seed);
  sweep_cmd->add_option("--out", sweep_out);

  // specdec
  auto* sd_cmd = app.add_subcommand("specdec", "speculative decoding with draft verification");
  add_common_flags(sd_cmd);
  std::string sd_target, sd_draft, sd_prompt, sd_data, sd_out;
  int sd_gamma = 4;
  sd_cmd->add_option("--target", sd_target)->required();
  sd_cmd->add_option("--draft", sd_draft)->required();
  sd_cmd->add_option("--prompt", sd_prompt);
  sd_cmd->add_option("--data", sd_data);
  sd_cmd->add_option("--gamma", sd_gamma);
  sd_cmd->add_option("--out", sd_out);
  add_gen_flags(sd_cmd);

  // ablate: the grid is chosen by which flag is present
  auto* ab_cmd = app.add_subcommand("ablate", "truncation / extraction / fusion grids");
  add_common_flags(ab_cmd);
  AblateArgs aa;
  ab_cmd->add_option("--train", aa.train_path)->required();
  ab_cmd->add_option("--test", aa.test_path)->required();
  ab_cmd->add_option("--llm", aa.llm_path)->required();
  ab_cmd->add_option("--slm", aa.slm_path)->required();
  auto* ab_trunc = ab_cmd->add_option("--truncate", aa.depths, "kept depths, e.g. 1,2,4");
  ab_trunc->delimiter(',');
  auto* ab_layers = ab_cmd->add_option("--layers", aa.layers, "extraction layers, e.g. 0,1,4");
  ab_layers->delimiter(',');
  auto* ab_fusion = ab_cmd->add_flag("--fusion-modes", "compare add vs replace fusion");
  ab_cmd->add_option("--out", aa.out)->required();
  add_train_flags(ab_cmd);
  add_gen_flags(ab_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
  }

  try {
    if (data_cmd->parsed())
      return cmd_data(task, alphabet, min_len, max_len, noise_factor, st.seed, train_size,
                      test_size, train_out, test_out);
    if (train_cmd->parsed()) return cmd_train(st, ta);
    if (gen_cmd->parsed()) return cmd_generate(st, gen_model, gen_prompt, gen_data, gen_out);
    if (eval_cmd->parsed()) return cmd_eval(ev_hyp, ev_ref, ev_data, ev_split, ev_id, ev_out);
    if (bench_cmd->parsed())
      return cmd_bench(bench_model, bench_id, bench_m, bench_n, bench_reps, bench_warmup,
                       bench_prompt_seed, bench_out);
    if (sweep_cmd->parsed())
      return cmd_sweep(sweep_models, sweep_ns, sweep_m, sweep_reps, sweep_warmup,
                       sweep_prompt_seed, sweep_out);
    if (sd_cmd->parsed())
      return cmd_specdec(st, sd_target, sd_draft, sd_prompt, sd_data, sd_gamma, sd_out);
    if (ab_cmd->parsed()) {
      if (ab_trunc->count() > 0)
        aa.mode = "truncate";
      else if (ab_layers->count() > 0)
        aa.mode = "extraction";
      else if (ab_fusion->count() > 0)
        aa.mode = "fusion";
      else
        throw ContractError("ablate: pass one of --truncate, --layers, --fusion-modes");
      return cmd_ablate(st, aa);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
