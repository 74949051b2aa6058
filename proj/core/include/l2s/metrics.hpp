#pragma once

#include <string>
#include <vector>

namespace l2s {

// Whitespace tokenization used by all text metrics.
std::vector<std::string> metric_tokens(const std::string& text);

// Corpus BLEU in [0, 100]: clipped n-gram precisions up to max_n, geometric
// mean, brevity penalty. Orders longer than every hypothesis are skipped;
// with smoothing, n>1 counts get add-one smoothing (sentence-level
// debugging), otherwise any zero precision yields 0.
double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references, int max_n = 4,
                   bool smooth = false);

// LCS-based F measure in [0, 1].
double rouge_l(const std::string& hypothesis, const std::string& reference);

// Fraction of pairs with exact string equality.
double exact_match(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references);

}  // namespace l2s
