#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "pobrl/corpus.hpp"

using namespace pobrl;

namespace {

Cluster toy_cluster() {
  Cluster c;
  c.id = "toy";
  c.articles = {segment_and_tokenize("The cat sat. It slept!"), segment_and_tokenize("Dogs bark. Cats nap. End here.")};
  for (std::size_t a = 0; a < c.articles.size(); ++a)
    for (std::size_t s = 0; s < c.articles[a].size(); ++s) {
      c.articles[a][s].article_index = static_cast<int>(a);
      c.articles[a][s].sentence_index = static_cast<int>(s);
    }
  return c;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    path = "corpus_test_tmp_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + ".jsonl";
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("tokenize lowercases and isolates punctuation") {
    CHECK(tokenize("The CAT, sat.") == std::vector<Token>{"the", "cat", ",", "sat", "."});
    CHECK(tokenize("  spaced\tout  ") == std::vector<Token>{"spaced", "out"});
    CHECK(tokenize("") == std::vector<Token>{});
  }

  TEST_CASE("segmentation splits on terminal punctuation") {
    auto sents = segment_and_tokenize("The cat sat. It slept!");
    REQUIRE(sents.size() == 2);
    CHECK(sents[0].tokens == std::vector<Token>{"the", "cat", "sat", "."});
    CHECK(sents[1].tokens == std::vector<Token>{"it", "slept", "!"});
  }

  TEST_CASE("segmentation edge cases") {
    CHECK(segment_and_tokenize("").empty());
    auto one = segment_and_tokenize("No terminal punctuation here");
    REQUIRE(one.size() == 1);
    CHECK(one[0].tokens.size() == 4);
    CHECK(segment_and_tokenize(" .  !  ").size() == 2);  // punctuation-only sentences keep their token
    CHECK(segment_and_tokenize("Tail respects trailing space. ").size() == 1);
    auto q = segment_and_tokenize("Really? Yes.");
    REQUIRE(q.size() == 2);
    CHECK(q[0].tokens == std::vector<Token>{"really", "?"});
  }

  TEST_CASE("abbreviation periods not followed by whitespace stay inside the sentence") {
    auto sents = segment_and_tokenize("Version 2.5 shipped today");
    REQUIRE(sents.size() == 1);
    CHECK(sents[0].tokens == std::vector<Token>{"version", "2", ".", "5", "shipped", "today"});
  }

  TEST_CASE("segmentation is idempotent on its own detokenized output") {
    for (const std::string raw : {"The cat sat. It slept!", "One two three? Four!", "plain tail with no stop"}) {
      auto first = segment_and_tokenize(raw);
      std::string rebuilt;
      for (const auto& s : first) {
        if (!rebuilt.empty()) rebuilt += " ";
        rebuilt += detokenize(s.tokens);
      }
      auto second = segment_and_tokenize(rebuilt);
      REQUIRE(second.size() == first.size());
      for (std::size_t i = 0; i < first.size(); ++i) CHECK(second[i].tokens == first[i].tokens);
    }
  }

  TEST_CASE("token validity") {
    CHECK(is_valid_token("cat"));
    CHECK(is_valid_token("."));
    CHECK_FALSE(is_valid_token(""));
    CHECK_FALSE(is_valid_token("two words"));
    CHECK_FALSE(is_valid_token("Tab\there"));
  }

  TEST_CASE("global indexing concatenates articles in order") {
    Cluster c = toy_cluster();
    CHECK(c.total_sentences() == 5);
    CHECK(c.global_index(0, 0) == 0);
    CHECK(c.global_index(1, 0) == 2);
    CHECK(c.sentence_at(2).tokens == std::vector<Token>{"dogs", "bark", "."});
    CHECK(c.all_sentences().size() == 5);
    for (int a = 0; a < 2; ++a)
      for (std::size_t s = 0; s < c.articles[static_cast<std::size_t>(a)].size(); ++s) {
        int g = c.global_index(a, static_cast<int>(s));
        CHECK(c.sentence_at(g).article_index == a);
        CHECK(c.sentence_at(g).sentence_index == static_cast<int>(s));
      }
  }

  TEST_CASE("pool state tracks extraction and rejects repeats") {
    Cluster c = toy_cluster();
    PoolState pool(c);
    CHECK(pool.pool_size() == 5);
    CHECK(pool.extracted().empty());

    pool.extract(3);
    pool.extract(0);
    CHECK(pool.extracted() == std::vector<int>{3, 0});
    CHECK(pool.pool_size() == 3);
    CHECK_FALSE(pool.is_available(3));
    CHECK(pool.is_available(1));
    CHECK_THROWS_AS(pool.extract(3), std::logic_error);
    CHECK_THROWS_AS(pool.extract(99), std::out_of_range);

    int avail = 0;
    for (bool b : pool.available()) avail += b ? 1 : 0;
    CHECK(avail + static_cast<int>(pool.extracted().size()) == c.total_sentences());
  }

  TEST_CASE("json line parsing and field validation") {
    Cluster c = cluster_from_json_line(R"({"id":"x","articles":[["A b. C d."],["E f."]],"gold":["A b."]})", 1);
    CHECK(c.id == "x");
    REQUIRE(c.articles.size() == 2);
    CHECK(c.articles[0].size() == 2);
    CHECK(c.gold_summary.size() == 1);
    CHECK(c.gold_summary[0].article_index == -1);

    CHECK_THROWS_WITH_AS(cluster_from_json_line(R"({"id":"x","gold":[]})", 1), doctest::Contains("missing field: articles @ line 1"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(cluster_from_json_line(R"({"articles":[["A."]],"gold":[]})", 4), doctest::Contains("missing field: id @ line 4"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(cluster_from_json_line("not json", 2), doctest::Contains("@ line 2"), std::runtime_error);
    CHECK_THROWS_AS(cluster_from_json_line(R"({"id":"x","articles":[],"gold":[]})", 1), std::runtime_error);
  }

  TEST_CASE("corpus file loading preserves order and line numbers") {
    TempFile f(R"({"id":"first","articles":[["A b. C d. E f."],["G h. I j."]],"gold":["A b."]})"
               "\n"
               R"({"id":"second","articles":[["K l."]],"gold":[]})"
               "\n");
    auto clusters = load_corpus(f.path);
    REQUIRE(clusters.size() == 2);
    CHECK(clusters[0].id == "first");
    CHECK(clusters[1].id == "second");
    CHECK(clusters[0].total_sentences() == 5);
    CHECK(clusters[0].global_index(1, 0) == 3);
    CHECK(clusters[1].gold_summary.empty());

    TempFile bad("{\"id\":\"ok\",\"articles\":[[\"A.\"]],\"gold\":[]}\nbroken\n");
    CHECK_THROWS_WITH_AS(load_corpus(bad.path), doctest::Contains("@ line 2"), std::runtime_error);
    CHECK_THROWS_AS(load_corpus("no_such_file.jsonl"), std::runtime_error);
  }

  TEST_CASE("oracle labels pick the rouge-l argmax per gold sentence") {
    Cluster c = cluster_from_json_line(
        R"({"id":"o","articles":[["a b.","a b c d."],["x y z."]],"gold":["a b c.","x y z."]})", 1);
    auto o = oracle_labels(c);
    REQUIRE(o.labels.size() == 2);
    // With the trailing period tokens: F1 vs "a b ." is 6/7, vs "a b c d ."
    // is 8/9, so the longer sentence wins.
    CHECK(o.labels[0] == 1);
    CHECK(o.labels[1] == 2);
    CHECK(o.stop_position == 2);
  }

  TEST_CASE("oracle label ties break toward the lowest global index") {
    Cluster c = cluster_from_json_line(R"({"id":"t","articles":[["a b.","a b."],["a b."]],"gold":["a b."]})", 1);
    auto o = oracle_labels(c);
    REQUIRE(o.labels.size() == 1);
    CHECK(o.labels[0] == 0);
  }

  TEST_CASE("oracle labels require a gold summary") {
    Cluster c = cluster_from_json_line(R"({"id":"e","articles":[["a b."]],"gold":[]})", 1);
    CHECK_THROWS_AS(oracle_labels(c), std::invalid_argument);
  }
}
