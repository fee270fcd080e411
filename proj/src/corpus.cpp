#include "pobrl/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pobrl/rouge.hpp"

namespace pobrl {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

}  // namespace

bool is_valid_token(const Token& t) {
  if (t.empty()) return false;
  for (char c : t) {
    if (is_space(c)) return false;
  }
  return true;
}

int Cluster::total_sentences() const {
  int n = 0;
  for (const auto& a : articles) n += static_cast<int>(a.size());
  return n;
}

int Cluster::global_index(int article, int sentence) const {
  int g = 0;
  for (int j = 0; j < article; ++j) g += static_cast<int>(articles[static_cast<std::size_t>(j)].size());
  return g + sentence;
}

const Sentence& Cluster::sentence_at(int global) const {
  int g = global;
  for (const auto& a : articles) {
    if (g < static_cast<int>(a.size())) return a[static_cast<std::size_t>(g)];
    g -= static_cast<int>(a.size());
  }
  throw std::out_of_range("cluster: global sentence index " + std::to_string(global) + " out of range");
}

std::vector<const Sentence*> Cluster::all_sentences() const {
  std::vector<const Sentence*> out;
  out.reserve(static_cast<std::size_t>(total_sentences()));
  for (const auto& a : articles)
    for (const auto& s : a) out.push_back(&s);
  return out;
}

PoolState::PoolState(const Cluster& cluster) : cluster_(&cluster) {
  pool_size_ = cluster.total_sentences();
  available_.assign(static_cast<std::size_t>(pool_size_), true);
}

void PoolState::extract(int global) {
  if (global < 0 || global >= static_cast<int>(available_.size()))
    throw std::out_of_range("pool: sentence index " + std::to_string(global) + " out of range");
  if (!available_[static_cast<std::size_t>(global)])
    throw std::logic_error("pool: sentence " + std::to_string(global) + " already extracted");
  available_[static_cast<std::size_t>(global)] = false;
  extracted_.push_back(global);
  --pool_size_;
}

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  Token cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      tokens.push_back(std::string(1, c));
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return tokens;
}

std::string detokenize(const std::vector<Token>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::vector<Sentence> segment_and_tokenize(const std::string& raw_article) {
  std::vector<Sentence> sentences;
  std::string cur;
  auto flush = [&] {
    auto toks = tokenize(cur);
    cur.clear();
    if (toks.empty()) return;
    Sentence s;
    s.tokens = std::move(toks);
    s.article_index = 0;
    s.sentence_index = static_cast<int>(sentences.size());
    sentences.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < raw_article.size(); ++i) {
    char c = raw_article[i];
    cur.push_back(c);
    if (is_terminal(c)) {
      bool at_end = i + 1 == raw_article.size();
      if (at_end || is_space(raw_article[i + 1])) flush();
    }
  }
  flush();
  return sentences;
}

namespace {

// Re-segments every input string, so a string holding two sentences yields
// two. Gold summaries go through the same rules as articles.
std::vector<Sentence> sentences_from_strings(const std::vector<std::string>& strings, int article_index) {
  std::vector<Sentence> out;
  for (const auto& str : strings) {
    for (auto& s : segment_and_tokenize(str)) {
      s.article_index = article_index;
      s.sentence_index = static_cast<int>(out.size());
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace

Cluster cluster_from_json_line(const std::string& line, int line_number) {
  const std::string at = " @ line " + std::to_string(line_number);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed json" + at + ": " + e.what());
  }
  if (!j.is_object()) throw std::runtime_error("malformed json (not an object)" + at);
  for (const char* field : {"id", "articles", "gold"}) {
    if (!j.contains(field)) throw std::runtime_error(std::string("missing field: ") + field + at);
  }

  Cluster c;
  try {
    c.id = j.at("id").get<std::string>();
    const auto& arts = j.at("articles");
    if (!arts.is_array() || arts.empty()) throw std::runtime_error("articles must be a non-empty array" + at);
    for (std::size_t a = 0; a < arts.size(); ++a) {
      auto strings = arts[a].get<std::vector<std::string>>();
      auto sents = sentences_from_strings(strings, static_cast<int>(a));
      if (sents.empty())
        throw std::runtime_error("article " + std::to_string(a) + " has no sentences" + at);
      c.articles.push_back(std::move(sents));
    }
    auto gold_strings = j.at("gold").get<std::vector<std::string>>();
    c.gold_summary = sentences_from_strings(gold_strings, -1);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed field" + at + ": " + e.what());
  }
  return c;
}

std::vector<Cluster> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<Cluster> clusters;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    clusters.push_back(cluster_from_json_line(line, line_number));
  }
  return clusters;
}

OracleLabels oracle_labels(const Cluster& cluster) {
  if (cluster.gold_summary.empty()) throw std::invalid_argument("oracle_labels: cluster '" + cluster.id + "' has empty gold summary");
  auto inputs = cluster.all_sentences();
  OracleLabels out;
  out.labels.reserve(cluster.gold_summary.size());
  for (const auto& gold : cluster.gold_summary) {
    int best = 0;
    double best_f1 = -1.0;
    for (std::size_t g = 0; g < inputs.size(); ++g) {
      double f1 = rouge_l(inputs[g]->tokens, gold.tokens).f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        best = static_cast<int>(g);
      }
    }
    out.labels.push_back(best);
  }
  out.stop_position = static_cast<int>(out.labels.size());
  return out;
}

}  // namespace pobrl
