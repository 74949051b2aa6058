#include "l2s/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "l2s/error.hpp"
#include "l2s/rng.hpp"

namespace l2s {

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::reversal_translation: return "reversal_translation";
    case TaskKind::keyed_substitution_translation: return "keyed_substitution_translation";
    case TaskKind::extract_summarize: return "extract_summarize";
  }
  return "?";
}

TaskKind task_kind_from_name(const std::string& s) {
  if (s == "reversal_translation") return TaskKind::reversal_translation;
  if (s == "keyed_substitution_translation") return TaskKind::keyed_substitution_translation;
  if (s == "extract_summarize") return TaskKind::extract_summarize;
  throw ContractError("unknown task kind '" + s + "'");
}

std::string task_prefix(TaskKind kind) {
  switch (kind) {
    case TaskKind::reversal_translation: return "translate: ";
    case TaskKind::keyed_substitution_translation: return "encode: ";
    case TaskKind::extract_summarize: return "summarize: ";
  }
  return "";
}

namespace {

std::string random_body(const TaskSpec& spec, Rng& rng) {
  const int len = spec.min_len +
                  static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.max_len - spec.min_len + 1)));
  std::string body(static_cast<size_t>(len), ' ');
  for (char& c : body) c = spec.alphabet[rng.next_below(spec.alphabet.size())];
  return body;
}

// Noise symbols come from the uppercase range, disjoint from the lowercase
// task alphabets, so the payload stays recoverable.
constexpr const char* kNoiseAlphabet = "ABCDEFGHIJKLMNOP";

Example make_example(const TaskSpec& spec, const std::string& key, Rng& rng) {
  Example ex;
  const std::string body = random_body(spec, rng);
  switch (spec.kind) {
    case TaskKind::reversal_translation: {
      ex.prompt = task_prefix(spec.kind) + body;
      ex.target = std::string(body.rbegin(), body.rend());
      break;
    }
    case TaskKind::keyed_substitution_translation: {
      ex.prompt = task_prefix(spec.kind) + body;
      std::string rev(body.rbegin(), body.rend());
      for (char& c : rev) c = key[spec.alphabet.find(c)];
      ex.target = rev;
      break;
    }
    case TaskKind::extract_summarize: {
      std::string noisy;
      for (char c : body) {
        for (int k = 0; k < spec.noise_factor; ++k)
          noisy.push_back(kNoiseAlphabet[rng.next_below(16)]);
        noisy.push_back(c);
      }
      ex.prompt = task_prefix(spec.kind) + noisy;
      ex.target = body;
      break;
    }
  }
  return ex;
}

}  // namespace

TaskData generate_task(const TaskSpec& spec) {
  if (spec.min_len < 1 || spec.max_len < spec.min_len)
    throw ContractError("generate_task: bad length range");
  if (spec.alphabet.empty()) throw ContractError("generate_task: empty alphabet");

  // Unique-prompt capacity at the given lengths.
  double capacity = 0.0;
  for (int len = spec.min_len; len <= spec.max_len; ++len)
    capacity += std::pow(static_cast<double>(spec.alphabet.size()), len);
  const double wanted = static_cast<double>(spec.train_size) + static_cast<double>(spec.test_size);
  if (wanted > capacity)
    throw ContractError("generate_task: " + std::to_string(spec.train_size + spec.test_size) +
                        " examples exceed the " + std::to_string(static_cast<int64_t>(capacity)) +
                        " distinct prompts available");

  Rng rng(spec.seed);
  // Fixed bijective substitution key for the keyed task.
  std::string key = spec.alphabet;
  for (size_t i = key.size(); i > 1; --i)
    std::swap(key[i - 1], key[rng.next_below(i)]);

  TaskData data;
  std::set<std::string> seen;
  while (data.train.size() + data.test.size() < static_cast<size_t>(spec.train_size + spec.test_size)) {
    Example ex = make_example(spec, key, rng);
    if (!seen.insert(ex.prompt).second) continue;
    if (data.train.size() < static_cast<size_t>(spec.train_size))
      data.train.push_back(std::move(ex));
    else
      data.test.push_back(std::move(ex));
  }
  return data;
}

}  // namespace l2s
