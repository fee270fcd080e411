#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "pobrl/corpus.hpp"
#include "pobrl/extractor.hpp"

using namespace pobrl;

namespace {

ExtractorConfig tiny_config() {
  ExtractorConfig c;
  c.embed_dim = 10;
  c.conv_windows = {2, 3};
  c.conv_filters = 4;
  c.article_hidden = 6;
  c.article_layers = 2;
  c.pointer_hidden = 8;
  c.attention_dim = 8;
  c.min_token_freq = 1;
  return c;
}

Cluster toy_cluster() {
  return cluster_from_json_line(
      R"({"id":"ext","articles":[["The cat sat down.","It purred loudly."],["Dogs bark at night.","Cats nap all day.","The end came fast."]],"gold":["The cat sat down.","Cats nap all day."]})",
      1);
}

ExtractorParams toy_params(const Cluster& cluster) {
  auto cfg = tiny_config();
  Vocab vocab = Vocab::build({cluster}, cfg.min_token_freq);
  return ExtractorParams::init(cfg, std::move(vocab), Rng(1234));
}

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& name) : path("extractor_test_tmp_" + name) {}
  ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE("extractor") {
  TEST_CASE("vocab build respects frequency threshold") {
    Cluster c = toy_cluster();
    Vocab all = Vocab::build({c}, 1);
    CHECK(all.size() == static_cast<int>(all.known().size()) + 1);
    CHECK(all.id("cat") > 0);
    CHECK(all.id("zebra") == 0);

    Vocab repeated = Vocab::build({c}, 2);
    CHECK(repeated.size() < all.size());
    CHECK(repeated.id("the") > 0);   // appears in both articles
    CHECK(repeated.id("purred") == 0);
    CHECK(repeated.id(".") > 0);
  }

  TEST_CASE("vocab ids are sorted and start at 1") {
    Vocab v = Vocab::from_tokens({"pear", "apple", "apple", "mango"});
    CHECK(v.known() == std::vector<Token>{"apple", "mango", "pear"});
    CHECK(v.id("apple") == 1);
    CHECK(v.id("mango") == 2);
    CHECK(v.id("pear") == 3);
    CHECK(v.id("missing") == 0);
    CHECK(v.size() == 4);
    CHECK_THROWS_AS(Vocab::from_tokens({"has space"}), std::invalid_argument);
  }

  TEST_CASE("vocab save and load round-trip") {
    Vocab v = Vocab::from_tokens({"alpha", "beta", "gamma"});
    TempPath tmp("vocab.txt");
    v.save(tmp.path);
    Vocab loaded = Vocab::load(tmp.path);
    CHECK(loaded.known() == v.known());
    CHECK(loaded.hash() == v.hash());
    CHECK(Vocab::from_tokens({"alpha", "beta"}).hash() != v.hash());
  }

  TEST_CASE("config metadata round-trip") {
    ExtractorConfig c = tiny_config();
    ExtractorConfig back = ExtractorConfig::from_metadata(c.metadata());
    CHECK(back.embed_dim == c.embed_dim);
    CHECK(back.conv_windows == c.conv_windows);
    CHECK(back.conv_filters == c.conv_filters);
    CHECK(back.article_hidden == c.article_hidden);
    CHECK(back.article_layers == c.article_layers);
    CHECK(back.pointer_hidden == c.pointer_hidden);
    CHECK(back.attention_dim == c.attention_dim);
    CHECK(back.min_token_freq == c.min_token_freq);
  }

  TEST_CASE("params init shapes follow vocab and config") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    CHECK(p.store.value("embed").rows() == p.vocab.size());
    CHECK(p.store.value("embed").cols() == p.config.embed_dim);
    CHECK(p.store.value("score.v").size() == p.config.attention_dim);
    CHECK(p.total_parameters() > 0);
  }

  TEST_CASE("params save and load round-trip") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    TempPath tmp("params.ckpt");
    p.save(tmp.path, {{"phase", "test"}});
    ExtractorParams loaded = ExtractorParams::load(tmp.path, p.vocab);
    CHECK(loaded.config.embed_dim == p.config.embed_dim);
    CHECK(loaded.total_parameters() == p.total_parameters());
    for (std::size_t i = 0; i < p.store.entries().size(); ++i) {
      const auto& a = p.store.entries()[i];
      const auto& b = loaded.store.entries()[i];
      REQUIRE(a.name == b.name);
      REQUIRE(a.value.v.size() == b.value.v.size());
      for (std::size_t j = 0; j < a.value.v.size(); ++j)
        CHECK(b.value.v[j] == doctest::Approx(a.value.v[j]).epsilon(1e-6));
    }
  }

  TEST_CASE("loading against a different vocab is rejected") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    TempPath tmp("mismatch.ckpt");
    p.save(tmp.path);
    Vocab other = Vocab::from_tokens({"alpha", "beta", "gamma"});
    CHECK_THROWS_WITH_AS(ExtractorParams::load(tmp.path, other), doctest::Contains("mismatch"), std::runtime_error);
  }

  TEST_CASE("sentence encoding depends only on the tokens") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    std::vector<Token> tokens = {"the", "cat", "sat", "down", "."};

    ad::Tape t1;
    ad::Var e1 = encode_sentence(t1, p, tokens);
    REQUIRE(t1.shape(e1) == std::vector<int>{p.config.sentence_dim()});

    ad::Tape t2;
    ad::Var e2 = encode_sentence(t2, p, tokens);
    CHECK(t1.val(e1) == t2.val(e2));

    ad::Var other = encode_sentence(t2, p, {"dogs", "bark", "at", "night", "."});
    CHECK(t2.val(other) != t2.val(e2));
  }

  TEST_CASE("sentences shorter than the widest window still encode") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    ad::Tape tape;
    ad::Var e = encode_sentence(tape, p, {"cat"});
    REQUIRE(tape.shape(e) == std::vector<int>{p.config.sentence_dim()});
    for (double x : tape.val(e)) CHECK(std::isfinite(x));
  }

  TEST_CASE("cluster encoding has the documented shapes") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    ad::Tape tape;
    EncodedCluster enc = encode_cluster(tape, p, c);
    int nm = c.total_sentences();
    REQUIRE(enc.nm == nm);
    CHECK(enc.sentence_enc.size() == static_cast<std::size_t>(nm));
    CHECK(tape.shape(enc.article_matrix) == std::vector<int>{nm, p.config.article_state_dim()});
    CHECK(enc.pointer_states.size() == static_cast<std::size_t>(nm));
    for (const auto& s : enc.pointer_states) CHECK(tape.shape(s) == std::vector<int>{p.config.pointer_hidden});
    CHECK(tape.shape(enc.score_matrix) == std::vector<int>{nm + 1, p.config.attention_dim});
  }

  TEST_CASE("step emits a masked distribution over pool plus stop") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    ad::Tape tape;
    ClusterDecoder dec(tape, p, c);
    PoolState pool(c);
    int nm = c.total_sentences();

    auto out = dec.step(pool, -1);
    REQUIRE(out.dist.probs.size() == static_cast<std::size_t>(nm) + 1);
    double total = 0.0;
    for (double x : out.dist.probs) {
      CHECK(x >= 0.0);
      total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out.allow[static_cast<std::size_t>(nm)]);
    CHECK(tape.shape(out.value) == std::vector<int>{1});
    CHECK(tape.scalar_val(out.entropy) >= 0.0);

    pool.extract(2);
    auto masked = dec.step(pool, 2);
    CHECK(masked.dist.probs[2] == 0.0);
    CHECK_FALSE(masked.allow[2]);
  }

  TEST_CASE("empty pool forces stop with probability one") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    ad::Tape tape;
    ClusterDecoder dec(tape, p, c);
    PoolState pool(c);
    int nm = c.total_sentences();
    for (int g = 0; g < nm; ++g) pool.extract(g);
    auto out = dec.step(pool, nm - 1);
    CHECK(out.dist.probs[static_cast<std::size_t>(nm)] == 1.0);
    for (int g = 0; g < nm; ++g) CHECK(out.dist.probs[static_cast<std::size_t>(g)] == 0.0);
    CHECK(out.dist.argmax() == nm);
  }

  TEST_CASE("unmasked step keeps extracted sentences in support") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);
    ad::Tape tape;
    ClusterDecoder dec(tape, p, c);
    PoolState pool(c);
    pool.extract(0);
    auto out = dec.step(pool, 0, false);
    CHECK(out.dist.probs[0] > 0.0);
    CHECK(out.allow[0]);
  }

  TEST_CASE("decoding is deterministic and selection-sensitive") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);

    auto run = [&](int first_selection) {
      ad::Tape tape;
      ClusterDecoder dec(tape, p, c);
      PoolState pool(c);
      dec.step(pool, -1);
      pool.extract(first_selection);
      return dec.step(pool, first_selection, false).dist.probs;
    };

    CHECK(run(1) == run(1));
    CHECK(run(1) != run(3));
  }

  TEST_CASE("peek_value matches the committed step and leaves state intact") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);

    ad::Tape t1;
    ClusterDecoder peeked(t1, p, c);
    PoolState pool1(c);
    peeked.step(pool1, -1);
    double peek_a = peeked.peek_value(1);
    double peek_b = peeked.peek_value(1);
    CHECK(peek_a == peek_b);
    CHECK_THROWS_AS(peeked.peek_value(c.total_sentences()), std::out_of_range);
    pool1.extract(1);
    double committed = t1.scalar_val(peeked.step(pool1, 1).value);
    CHECK(committed == doctest::Approx(peek_a).epsilon(1e-12));

    ad::Tape t2;
    ClusterDecoder fresh(t2, p, c);
    PoolState pool2(c);
    fresh.step(pool2, -1);
    pool2.extract(1);
    CHECK(t2.scalar_val(fresh.step(pool2, 1).value) == doctest::Approx(committed).epsilon(1e-12));
  }

  TEST_CASE("distribution argmax and sampling respect the mask") {
    ExtractionDistribution d;
    d.probs = {0.0, 0.7, 0.1, 0.2};
    d.mask = {false, true, true, true};
    CHECK(d.stop_slot() == 3);
    CHECK(d.argmax() == 1);

    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
      int pick = d.sample(rng);
      CHECK(pick >= 1);
      CHECK(pick <= 3);
    }
    Rng a(7), b(7);
    for (int i = 0; i < 50; ++i) CHECK(d.sample(a) == d.sample(b));
  }

  TEST_CASE("positive rescaling of the scoring vector keeps the argmax") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params(c);

    auto first_probs = [&] {
      ad::Tape tape;
      ClusterDecoder dec(tape, p, c);
      PoolState pool(c);
      return dec.step(pool, -1).dist;
    };

    auto before = first_probs();
    for (double& x : p.store.value("score.v").v) x *= 3.0;
    auto after = first_probs();
    CHECK(before.argmax() == after.argmax());
    CHECK(before.probs != after.probs);
  }
}
