#include "pobrl/rouge.hpp"

#include <algorithm>
#include <stdexcept>

namespace pobrl {

RougeScore make_rouge_score(double precision, double recall) {
  RougeScore s;
  s.precision = precision;
  s.recall = recall;
  s.f1 = (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return s;
}

NGramCounts ngram_counts(const std::vector<Token>& tokens, int n) {
  NGramCounts counts;
  if (n < 1) throw std::invalid_argument("ngram_counts: n must be >= 1");
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    NGram g(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i) + n);
    ++counts[g];
  }
  return counts;
}

namespace {

long long clipped_overlap(const NGramCounts& candidate, const NGramCounts& reference) {
  long long overlap = 0;
  for (const auto& [g, c] : candidate) {
    auto it = reference.find(g);
    if (it != reference.end()) overlap += std::min(c, it->second);
  }
  return overlap;
}

long long total_count(const NGramCounts& counts) {
  long long t = 0;
  for (const auto& [g, c] : counts) t += c;
  return t;
}

RougeScore from_counts(const NGramCounts& candidate, const NGramCounts& reference) {
  long long cand_total = total_count(candidate);
  long long ref_total = total_count(reference);
  long long overlap = clipped_overlap(candidate, reference);
  double p = cand_total > 0 ? static_cast<double>(overlap) / static_cast<double>(cand_total) : 0.0;
  double r = ref_total > 0 ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
  return make_rouge_score(p, r);
}

// Unigrams plus skip-bigrams with index distance <= 4. The pair (i, j) with
// j - i == 1 is the ordinary bigram; unigrams are kept in the unit set.
NGramCounts su4_units(const std::vector<Token>& tokens) {
  NGramCounts units;
  for (const auto& t : tokens) ++units[NGram{t}];
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t j = i + 1; j < tokens.size() && j - i <= 4; ++j) {
      ++units[NGram{tokens[i], tokens[j]}];
    }
  }
  return units;
}

}  // namespace

RougeScore rouge_n(const std::vector<Token>& candidate, const std::vector<Token>& reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  return from_counts(ngram_counts(candidate, n), ngram_counts(reference, n));
}

int lcs_length(const std::vector<Token>& a, const std::vector<Token>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(const std::vector<Token>& candidate, const std::vector<Token>& reference) {
  if (candidate.empty() || reference.empty()) return RougeScore{};
  double lcs = lcs_length(candidate, reference);
  double p = lcs / static_cast<double>(candidate.size());
  double r = lcs / static_cast<double>(reference.size());
  return make_rouge_score(p, r);
}

RougeScore rouge_su4(const std::vector<Token>& candidate, const std::vector<Token>& reference) {
  return from_counts(su4_units(candidate), su4_units(reference));
}

DecouplingResult decoupling_check(const std::vector<Sentence>& summary, const std::vector<Token>& gold, int n) {
  if (gold.empty()) throw std::invalid_argument("decoupling_check: gold must be non-empty");
  NGramCounts ref = ngram_counts(gold, n);
  long long ref_total = total_count(ref);
  DecouplingResult result;
  if (ref_total == 0) return result;  // gold shorter than n

  // Sentence-set counting: n-grams never cross sentence boundaries.
  std::vector<NGramCounts> per_sentence;
  per_sentence.reserve(summary.size());
  NGramCounts summary_counts;
  for (const auto& s : summary) {
    NGramCounts c = ngram_counts(s.tokens, n);
    for (const auto& [g, k] : c) summary_counts[g] += k;
    per_sentence.push_back(std::move(c));
  }

  // Integer numerators over the common denominator R_N keep the two-sentence
  // identity exact instead of within float rounding.
  long long exact_num = clipped_overlap(summary_counts, ref);

  long long importance_num = 0;
  for (const auto& c : per_sentence) importance_num += clipped_overlap(c, ref);

  // Pairwise redundancy over unordered pairs; with <= 2 sentences the
  // decomposition is exact.
  long long redundancy_num = 0;
  for (std::size_t a = 0; a < per_sentence.size(); ++a) {
    for (std::size_t b = a + 1; b < per_sentence.size(); ++b) {
      for (const auto& [g, fref] : ref) {
        auto ia = per_sentence[a].find(g);
        auto ib = per_sentence[b].find(g);
        long long ca = ia == per_sentence[a].end() ? 0 : std::min(ia->second, fref);
        long long cb = ib == per_sentence[b].end() ? 0 : std::min(ib->second, fref);
        redundancy_num += std::max(ca + cb - static_cast<long long>(fref), 0LL);
      }
    }
  }

  double denom = static_cast<double>(ref_total);
  result.exact = static_cast<double>(exact_num) / denom;
  result.approx = static_cast<double>(importance_num - redundancy_num) / denom;
  result.gap = static_cast<double>(std::llabs(exact_num - (importance_num - redundancy_num))) / denom;
  return result;
}

}  // namespace pobrl
