#include "l2s/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "l2s/error.hpp"

namespace l2s {

std::vector<std::string> metric_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) tokens.push_back(tok);
  return tokens;
}

namespace {

std::map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += tokens[i + static_cast<size_t>(j)];
    }
    counts[key]++;
  }
  return counts;
}

}  // namespace

double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references, int max_n, bool smooth) {
  if (hypotheses.empty()) throw ContractError("corpus_bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw ContractError("corpus_bleu: hypothesis/reference count mismatch");

  std::vector<int64_t> correct(static_cast<size_t>(max_n), 0);
  std::vector<int64_t> total(static_cast<size_t>(max_n), 0);
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    const auto hyp = metric_tokens(hypotheses[i]);
    const auto ref = metric_tokens(references[i]);
    hyp_len += static_cast<int64_t>(hyp.size());
    ref_len += static_cast<int64_t>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto hc = ngram_counts(hyp, n);
      const auto rc = ngram_counts(ref, n);
      for (const auto& [key, count] : hc) {
        total[static_cast<size_t>(n - 1)] += count;
        auto it = rc.find(key);
        if (it != rc.end())
          correct[static_cast<size_t>(n - 1)] += std::min(count, it->second);
      }
    }
  }

  double log_precision = 0.0;
  int used_orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    const int64_t tot = total[static_cast<size_t>(n - 1)];
    const int64_t cor = correct[static_cast<size_t>(n - 1)];
    if (tot == 0) continue;  // every hypothesis shorter than n
    ++used_orders;
    if (smooth && n > 1) {
      log_precision += std::log(static_cast<double>(cor + 1) / static_cast<double>(tot + 1));
    } else {
      if (cor == 0) return 0.0;
      log_precision += std::log(static_cast<double>(cor) / static_cast<double>(tot));
    }
  }
  if (used_orders == 0) return 0.0;
  const double geo_mean = std::exp(log_precision / used_orders);
  const double bp =
      hyp_len >= ref_len || hyp_len == 0
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * geo_mean * bp;
}

double rouge_l(const std::string& hypothesis, const std::string& reference) {
  const auto hyp = metric_tokens(hypothesis);
  const auto ref = metric_tokens(reference);
  if (hyp.empty() || ref.empty()) return 0.0;
  const size_t h = hyp.size(), r = ref.size();
  std::vector<int> prev(r + 1, 0), cur(r + 1, 0);
  for (size_t i = 1; i <= h; ++i) {
    for (size_t j = 1; j <= r; ++j) {
      cur[j] = hyp[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = prev[r];
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(h);
  const double rr = lcs / static_cast<double>(r);
  return 2.0 * p * rr / (p + rr);
}

double exact_match(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size())
    throw ContractError("exact_match: hypothesis/reference count mismatch");
  if (hypotheses.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i)
    if (hypotheses[i] == references[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(hypotheses.size());
}

}  // namespace l2s
