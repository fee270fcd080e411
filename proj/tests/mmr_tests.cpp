#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "doctest.h"
#include "pobrl/mmr.hpp"
#include "pobrl/rng.hpp"

using namespace pobrl;

namespace {

// Cluster of single-token-named sentences, one article, for scorer plumbing.
Cluster synthetic_cluster(int count, int tokens_per_sentence) {
  Cluster c;
  c.id = "synthetic";
  c.articles.emplace_back();
  for (int i = 0; i < count; ++i) {
    Sentence s;
    for (int t = 0; t < tokens_per_sentence; ++t) s.tokens.push_back("s" + std::to_string(i) + "t" + std::to_string(t));
    s.article_index = 0;
    s.sentence_index = i;
    c.articles[0].push_back(std::move(s));
  }
  return c;
}

int global_of(const Cluster& c, const Sentence& s) { return c.global_index(s.article_index, s.sentence_index); }

ScorerPair table_scorers(const Cluster& c, std::vector<double> imp, std::map<std::pair<int, int>, double> red) {
  ScorerPair sp;
  sp.importance = [&c, imp](const Sentence& s) { return imp[static_cast<std::size_t>(global_of(c, s))]; };
  sp.redundancy = [&c, red](const Sentence& a, const Sentence& b) {
    int i = global_of(c, a), j = global_of(c, b);
    auto it = red.find({std::min(i, j), std::max(i, j)});
    return it == red.end() ? 0.0 : it->second;
  };
  return sp;
}

double set_objective(const Cluster& c, const ScorerPair& sp, double lambda, const std::vector<int>& ids) {
  double v = 0.0;
  for (int i : ids) v += lambda * sp.importance(c.sentence_at(i));
  for (std::size_t a = 0; a < ids.size(); ++a)
    for (std::size_t b = a + 1; b < ids.size(); ++b)
      v -= (1.0 - lambda) * sp.redundancy(c.sentence_at(ids[a]), c.sentence_at(ids[b]));
  return v;
}

}  // namespace

TEST_SUITE("mmr") {
  TEST_CASE("lambda 1 sorts by importance with index tie-break") {
    Cluster c = synthetic_cluster(4, 2);
    auto sp = table_scorers(c, {0.2, 0.9, 0.9, 0.5}, {});
    auto out = greedy_mmr(c, {1.0, 100}, sp);
    REQUIRE(out.size() == 4);
    CHECK(global_of(c, out[0]) == 1);
    CHECK(global_of(c, out[1]) == 2);
    CHECK(global_of(c, out[2]) == 3);
    CHECK(global_of(c, out[3]) == 0);
  }

  TEST_CASE("negative marginal score still extracts while budget remains") {
    Cluster c = synthetic_cluster(2, 2);
    auto sp = table_scorers(c, {0.9, 0.8}, {{{0, 1}, 1.0}});
    auto out = greedy_mmr(c, {0.5, 100}, sp);
    REQUIRE(out.size() == 2);
    CHECK(global_of(c, out[0]) == 0);
    CHECK(global_of(c, out[1]) == 1);
  }

  TEST_CASE("token budget guard is checked before each round") {
    Cluster c = synthetic_cluster(5, 3);
    auto sp = table_scorers(c, {5, 4, 3, 2, 1}, {});

    auto two = greedy_mmr(c, {1.0, 4}, sp);  // 3 < 4 after one pick, 6 >= 4 after two
    CHECK(two.size() == 2);

    auto one = greedy_mmr(c, {1.0, 3}, sp);  // 3 >= 3 immediately
    CHECK(one.size() == 1);

    auto all = greedy_mmr(c, {1.0, 1000}, sp);
    CHECK(all.size() == 5);

    int total = 0;
    for (const auto& s : two) total += static_cast<int>(s.tokens.size());
    CHECK(total <= 4 + static_cast<int>(two.back().tokens.size()) - 1);
  }

  TEST_CASE("no sentence is extracted twice") {
    Cluster c = synthetic_cluster(6, 1);
    auto sp = table_scorers(c, {1, 1, 1, 1, 1, 1}, {});
    auto out = greedy_mmr(c, {0.3, 100}, sp);
    REQUIRE(out.size() == 6);
    std::vector<bool> seen(6, false);
    for (const auto& s : out) {
      int g = global_of(c, s);
      CHECK_FALSE(seen[static_cast<std::size_t>(g)]);
      seen[static_cast<std::size_t>(g)] = true;
    }
  }

  TEST_CASE("greedy is suboptimal on a constructed instance") {
    Cluster c = synthetic_cluster(3, 2);
    auto sp = table_scorers(c, {1.0, 0.9, 0.9}, {{{0, 1}, 0.9}, {{0, 2}, 0.9}, {{1, 2}, 0.0}});
    auto out = greedy_mmr(c, {0.5, 3}, sp);  // budget holds exactly two picks
    REQUIRE(out.size() == 2);
    CHECK(global_of(c, out[0]) == 0);
    CHECK(global_of(c, out[1]) == 1);
    double greedy_obj = set_objective(c, sp, 0.5, {0, 1});
    double best_pair = set_objective(c, sp, 0.5, {1, 2});
    CHECK(greedy_obj == doctest::Approx(0.5));
    CHECK(best_pair == doctest::Approx(0.9));
    CHECK(greedy_obj < best_pair);
  }

  TEST_CASE("greedy pair objective never beats the exhaustive best pair") {
    Rng rng(404);
    for (int trial = 0; trial < 100; ++trial) {
      int n = 2 + rng.uniform_int(4);
      Cluster c = synthetic_cluster(n, 2);
      std::vector<double> imp;
      for (int i = 0; i < n; ++i) imp.push_back(rng.uniform());
      std::map<std::pair<int, int>, double> red;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) red[{i, j}] = rng.uniform();
      auto sp = table_scorers(c, imp, red);
      double lambda = rng.uniform();

      auto out = greedy_mmr(c, {lambda, 3}, sp);
      REQUIRE(out.size() == 2);
      double greedy_obj = set_objective(c, sp, lambda, {global_of(c, out[0]), global_of(c, out[1])});

      double best = -1e30;
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) best = std::max(best, set_objective(c, sp, lambda, {i, j}));
      CHECK(greedy_obj <= best + 1e-12);
    }
  }

  TEST_CASE("tfidf importance follows the idf formula") {
    Cluster c = cluster_from_json_line(R"({"id":"t","articles":[["cat sat."],["dog ran."]],"gold":[]})", 1);
    auto imp = tfidf_importance(c);
    // "." appears in both articles (idf 0); "cat" and "sat" are unique to
    // article 0 with cluster tf 1.
    double expected = (std::log(2.0) + std::log(2.0) + 0.0) / 3.0;
    CHECK(imp(c.sentence_at(0)) == doctest::Approx(expected));

    Cluster single = cluster_from_json_line(R"({"id":"s","articles":[["cat sat."]],"gold":[]})", 1);
    auto simp = tfidf_importance(single);
    CHECK(simp(single.sentence_at(0)) == doctest::Approx(0.0));
  }

  TEST_CASE("tfidf weights repeated distinctive tokens higher") {
    Cluster c = cluster_from_json_line(R"({"id":"r","articles":[["cat cat.","dog dog."],["dog grew."]],"gold":[]})", 1);
    auto imp = tfidf_importance(c);
    // tf(cat)=2 with idf ln2 vs tf(dog)=3 with idf 0.
    CHECK(imp(c.sentence_at(0)) > imp(c.sentence_at(1)));
  }

  TEST_CASE("rouge-l redundancy scorer") {
    auto red = rougeL_redundancy();
    Sentence a, b, d;
    a.tokens = {"a", "b", "c"};
    b.tokens = {"a", "c"};
    d.tokens = {"x", "y"};
    CHECK(red(a, a) == doctest::Approx(1.0));
    CHECK(red(a, d) == doctest::Approx(0.0));
    CHECK(red(a, b) == doctest::Approx(0.8));
  }
}
