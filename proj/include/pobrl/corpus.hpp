#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace pobrl {

// Lowercase token, no interior whitespace. Produced by tokenize(); loaders
// validate externally supplied tokens with is_valid_token().
using Token = std::string;

bool is_valid_token(const Token& t);

struct Sentence {
  std::vector<Token> tokens;
  int article_index = 0;   // -1 for gold-summary sentences
  int sentence_index = 0;  // position within the article (or gold summary)
};

// One multi-document example: n articles plus an optional gold summary.
// Sentences carry a global index assigned by concatenating articles in order
// (article 0 first), as if they came from a single piece of text.
struct Cluster {
  std::string id;
  std::vector<std::vector<Sentence>> articles;
  std::vector<Sentence> gold_summary;

  int total_sentences() const;
  int global_index(int article, int sentence) const;
  const Sentence& sentence_at(int global) const;
  std::vector<const Sentence*> all_sentences() const;
};

// The extraction MDP state: remaining-sentence mask plus the summary so far,
// in extraction order.
class PoolState {
 public:
  explicit PoolState(const Cluster& cluster);

  const Cluster& cluster() const { return *cluster_; }
  const std::vector<int>& extracted() const { return extracted_; }
  const std::vector<bool>& available() const { return available_; }
  bool is_available(int global) const { return available_[static_cast<std::size_t>(global)]; }
  int pool_size() const { return pool_size_; }

  void extract(int global);  // throws if already extracted

 private:
  const Cluster* cluster_;
  std::vector<int> extracted_;
  std::vector<bool> available_;
  int pool_size_ = 0;
};

struct OracleLabels {
  std::vector<int> labels;  // per gold sentence: best-matching global index
  int stop_position = 0;    // == labels.size(); the supervised STOP step
};

// Splits raw text on terminal punctuation (. ! ?) followed by whitespace,
// lowercases, and isolates punctuation as standalone tokens. Empty sentences
// are dropped; empty input yields an empty list.
std::vector<Sentence> segment_and_tokenize(const std::string& raw_article);

std::vector<Token> tokenize(const std::string& text);

std::string detokenize(const std::vector<Token>& tokens);

// JSONL corpus loader, one cluster per line:
//   {"id": "...", "articles": [["sentence text", ...], ...], "gold": [...]}
// Malformed lines and missing fields raise errors naming the line / field.
std::vector<Cluster> load_corpus(const std::string& path);

Cluster cluster_from_json_line(const std::string& line, int line_number);

// For each gold sentence, the global index maximizing sentence-level ROUGE-L
// F1 against it; ties break toward the lowest global index.
OracleLabels oracle_labels(const Cluster& cluster);

}  // namespace pobrl
