#pragma once

#include <map>
#include <vector>

#include "pobrl/corpus.hpp"

namespace pobrl {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

RougeScore make_rouge_score(double precision, double recall);

using NGram = std::vector<Token>;
using NGramCounts = std::map<NGram, int>;

NGramCounts ngram_counts(const std::vector<Token>& tokens, int n);

// Clipped n-gram overlap. Recall divides by the reference n-gram count,
// precision by the candidate's; an empty denominator makes that component 0.
RougeScore rouge_n(const std::vector<Token>& candidate, const std::vector<Token>& reference, int n);

// Longest-common-subsequence variant. Multi-sentence inputs are scored on
// their concatenated token streams (single LCS).
RougeScore rouge_l(const std::vector<Token>& candidate, const std::vector<Token>& reference);

// Unigrams plus skip-bigrams with index distance <= 4, clipped as in rouge_n.
RougeScore rouge_su4(const std::vector<Token>& candidate, const std::vector<Token>& reference);

int lcs_length(const std::vector<Token>& a, const std::vector<Token>& b);

// Compares the exact clipped-recall ROUGE-N of a summary against the
// importance-minus-pairwise-redundancy decomposition. The pairwise formula is
// exact for summaries of at most two sentences; for larger summaries the gap
// reports the dropped higher-order terms.
struct DecouplingResult {
  double exact = 0.0;
  double approx = 0.0;
  double gap = 0.0;
};

DecouplingResult decoupling_check(const std::vector<Sentence>& summary, const std::vector<Token>& gold, int n);

}  // namespace pobrl
