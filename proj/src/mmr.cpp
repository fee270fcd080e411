#include "pobrl/mmr.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>

#include "pobrl/rouge.hpp"

namespace pobrl {

std::vector<Sentence> greedy_mmr(const Cluster& cluster, const MmrConfig& config, const ScorerPair& scorers) {
  if (config.lambda < 0.0 || config.lambda > 1.0) throw std::invalid_argument("greedy_mmr: lambda must be in [0,1]");
  if (config.max_len < 1) throw std::invalid_argument("greedy_mmr: max_len must be >= 1");
  if (cluster.total_sentences() < 1) throw std::invalid_argument("greedy_mmr: cluster has no sentences");

  auto pool = cluster.all_sentences();
  std::vector<bool> taken(pool.size(), false);
  std::vector<Sentence> summary;
  int len = 0;
  std::size_t remaining = pool.size();

  while (len < config.max_len && remaining > 0) {
    double best = -std::numeric_limits<double>::infinity();
    int pick = -1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (taken[i]) continue;
      double imp = scorers.importance(*pool[i]);
      double red = summary.empty() ? 0.0 : -std::numeric_limits<double>::infinity();
      for (const auto& s : summary) red = std::max(red, scorers.redundancy(*pool[i], s));
      double score = config.lambda * imp - (1.0 - config.lambda) * red;
      if (score > best) {  // strict: first-seen (lowest index) wins ties
        best = score;
        pick = static_cast<int>(i);
      }
    }
    taken[static_cast<std::size_t>(pick)] = true;
    --remaining;
    summary.push_back(*pool[static_cast<std::size_t>(pick)]);
    len += static_cast<int>(pool[static_cast<std::size_t>(pick)]->tokens.size());
  }
  return summary;
}

ImportanceFn tfidf_importance(const Cluster& cluster) {
  auto tf = std::make_shared<std::map<Token, int>>();
  auto article_freq = std::make_shared<std::map<Token, int>>();
  int n_articles = static_cast<int>(cluster.articles.size());

  for (const auto& article : cluster.articles) {
    std::set<Token> seen;
    for (const auto& s : article) {
      for (const auto& t : s.tokens) {
        ++(*tf)[t];
        seen.insert(t);
      }
    }
    for (const auto& t : seen) ++(*article_freq)[t];
  }

  return [tf, article_freq, n_articles](const Sentence& s) {
    if (s.tokens.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& t : s.tokens) {
      auto it = tf->find(t);
      auto af = article_freq->find(t);
      if (it == tf->end() || af == article_freq->end()) continue;
      sum += static_cast<double>(it->second) * std::log(static_cast<double>(n_articles) / static_cast<double>(af->second));
    }
    return sum / static_cast<double>(s.tokens.size());
  };
}

RedundancyFn rougeL_redundancy() {
  return [](const Sentence& a, const Sentence& b) { return rouge_l(a.tokens, b.tokens).f1; };
}

}  // namespace pobrl
