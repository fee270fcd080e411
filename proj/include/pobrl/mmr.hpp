#pragma once

#include <functional>

#include "pobrl/corpus.hpp"

namespace pobrl {

struct MmrConfig {
  double lambda = 0.5;  // in [0, 1]
  int max_len = 100;    // token budget, >= 1
};

using ImportanceFn = std::function<double(const Sentence&)>;
using RedundancyFn = std::function<double(const Sentence&, const Sentence&)>;

struct ScorerPair {
  ImportanceFn importance;
  RedundancyFn redundancy;
};

// Greedy iterative MMR. Each round picks the pool argmax of
// lambda*imp(s) - (1-lambda)*max_{t in S} red(s, t), with the max over an
// empty S taken as 0 and ties broken toward the lowest global index. The
// token-budget guard is checked before each round, so the final sentence may
// overshoot the budget.
std::vector<Sentence> greedy_mmr(const Cluster& cluster, const MmrConfig& config, const ScorerPair& scorers);

// Mean tf-idf of the sentence's tokens; tf counts within the whole cluster,
// idf = ln(n_articles / article_frequency).
ImportanceFn tfidf_importance(const Cluster& cluster);

// Sentence-pair ROUGE-L F1.
RedundancyFn rougeL_redundancy();

}  // namespace pobrl
