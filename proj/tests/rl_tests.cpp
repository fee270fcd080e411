#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "pobrl/corpus.hpp"
#include "pobrl/extractor.hpp"
#include "pobrl/rl.hpp"
#include "pobrl/rouge.hpp"

using namespace pobrl;

namespace {

ExtractorConfig tiny_config() {
  ExtractorConfig c;
  c.embed_dim = 8;
  c.conv_windows = {2, 3};
  c.conv_filters = 3;
  c.article_hidden = 4;
  c.article_layers = 1;
  c.pointer_hidden = 6;
  c.attention_dim = 6;
  c.min_token_freq = 1;
  return c;
}

Cluster toy_cluster(const std::string& id = "rl") {
  return cluster_from_json_line(
      R"({"id":")" + id +
          R"(","articles":[["The cat sat down.","It purred loudly."],["Dogs bark at night.","Cats nap all day.","The end came fast."]],"gold":["The cat sat down.","Cats nap all day."]})",
      1);
}

std::vector<Cluster> toy_corpus(int n) {
  std::vector<Cluster> corpus;
  for (int i = 0; i < n; ++i) corpus.push_back(toy_cluster("rl" + std::to_string(i)));
  return corpus;
}

ExtractorParams toy_params(const std::vector<Cluster>& corpus, std::uint64_t seed = 1234) {
  auto cfg = tiny_config();
  Vocab vocab = Vocab::build(corpus, cfg.min_token_freq);
  return ExtractorParams::init(cfg, std::move(vocab), Rng(seed));
}

Trajectory fake_trajectory(const std::vector<double>& rewards, const std::vector<double>& values) {
  Trajectory t;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    TrajectoryStep s;
    s.action = static_cast<int>(i);
    s.reward = rewards[i];
    s.value = i < values.size() ? values[i] : 0.0;
    t.steps.push_back(s);
  }
  return t;
}

TabularMdp two_state_self_loop() {
  TabularMdp m;
  m.n_states = 2;
  m.n_actions = 1;
  m.gamma = 0.5;
  m.transitions = {1.0, 0.0, 0.0, 1.0};
  m.rewards = {1.0, 2.0};
  m.initial = {0.5, 0.5};
  return m;
}

}  // namespace

TEST_SUITE("rl") {
  TEST_CASE("objectives map to their sentence metrics") {
    CHECK(reward_config_for(PolicyObjective::Importance).sentence_metric == SentenceMetric::RougeLF1);
    CHECK(reward_config_for(PolicyObjective::Redundancy).sentence_metric == SentenceMetric::RougeLPrecision);
    CHECK(reward_config_for(PolicyObjective::Importance).gamma == 0.99);
  }

  TEST_CASE("sentence reward follows the configured metric") {
    Cluster c = toy_cluster();
    RewardConfig f1;
    f1.sentence_metric = SentenceMetric::RougeLF1;
    RewardConfig prec;
    prec.sentence_metric = SentenceMetric::RougeLPrecision;

    CHECK(sentence_reward(f1, c, 0, 0) == 1.0);  // exact gold match
    int nap = c.global_index(1, 1);
    CHECK(sentence_reward(f1, c, 1, nap) == 1.0);

    int barks = c.global_index(1, 0);
    auto expected = rouge_l(c.sentence_at(barks).tokens, c.gold_summary[0].tokens);
    CHECK(sentence_reward(f1, c, 0, barks) == doctest::Approx(expected.f1));
    CHECK(sentence_reward(prec, c, 0, barks) == doctest::Approx(expected.precision));

    CHECK(sentence_reward(f1, c, 2, 0) == 0.0);  // past the gold length
    CHECK(sentence_reward(f1, c, 99, 0) == 0.0);
  }

  TEST_CASE("terminal reward scores the concatenated streams") {
    Cluster c = toy_cluster();
    CHECK(terminal_reward(c, {}) == 0.0);

    std::vector<int> picks = {0, c.global_index(1, 1)};
    std::vector<Token> stream;
    for (int g : picks) {
      const auto& t = c.sentence_at(g).tokens;
      stream.insert(stream.end(), t.begin(), t.end());
    }
    std::vector<Token> gold;
    for (const auto& s : c.gold_summary) gold.insert(gold.end(), s.tokens.begin(), s.tokens.end());
    CHECK(terminal_reward(c, picks) == doctest::Approx(rouge_n(stream, gold, 1).f1));
    CHECK(terminal_reward(c, picks) == 1.0);
  }

  TEST_CASE("discounted returns match the hand fixtures") {
    auto t1 = fake_trajectory({1.0, 1.0}, {});
    CHECK(discounted_returns(t1, 1.0) == std::vector<double>{2.0, 1.0});

    auto t2 = fake_trajectory({0.0, 1.0}, {});
    CHECK(discounted_returns(t2, 0.5) == std::vector<double>{0.5, 1.0});
  }

  TEST_CASE("returns recursion equals the direct discounted sum") {
    Rng rng(5);
    std::vector<double> rewards;
    for (int i = 0; i < 8; ++i) rewards.push_back(rng.uniform() * 2.0 - 1.0);
    auto traj = fake_trajectory(rewards, {});
    double gamma = 0.9;
    auto q = discounted_returns(traj, gamma);
    REQUIRE(q.size() == rewards.size());
    for (std::size_t t = 0; t < rewards.size(); ++t) {
      double direct = 0.0;
      for (std::size_t k = t; k < rewards.size(); ++k) direct += std::pow(gamma, static_cast<double>(k - t)) * rewards[k];
      CHECK(q[t] == doctest::Approx(direct).epsilon(1e-12));
    }
  }

  TEST_CASE("advantage subtracts the recorded critic values") {
    auto traj = fake_trajectory({1.0, 1.0}, {0.5, 0.25});
    auto adv = advantage(traj, 1.0);
    REQUIRE(adv.size() == 2);
    CHECK(adv[0] == doctest::Approx(1.5));
    CHECK(adv[1] == doctest::Approx(0.75));
  }

  TEST_CASE("a2c loss matches the hand formula on one step") {
    ad::Tape t;
    ad::ParamStore store;
    store.add("logits", {3}).v = {0.2, 1.1, -0.4};
    ad::Var lp_all = t.log_softmax(t.param(store, "logits"));
    ad::Var lp = t.pick(lp_all, 1);
    ad::Var value = t.input(ad::Tensor::vector({0.3}));
    ad::Var ent = t.entropy_from_log_probs(lp_all, {true, true, true});
    double q = 0.9;
    double bonus = 0.01;

    ad::Var loss = a2c_loss(t, {lp}, {value}, {ent}, {q}, bonus);
    double adv = q - 0.3;
    double expected = -t.scalar_val(lp) * adv + (0.3 - q) * (0.3 - q) - bonus * t.scalar_val(ent);
    CHECK(t.scalar_val(loss) == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("positive advantage pushes probability toward the chosen action") {
    ad::Tape t;
    ad::ParamStore store;
    store.add("logits", {3}).v = {0.0, 0.5, -0.5};
    ad::Var lp_all = t.log_softmax(t.param(store, "logits"));
    ad::Var lp = t.pick(lp_all, 2);
    ad::Var value = t.input(ad::Tensor::vector({0.0}));
    ad::Var ent = t.entropy_from_log_probs(lp_all, {true, true, true});

    ad::Var loss = a2c_loss(t, {lp}, {value}, {ent}, {1.0}, 0.0);
    t.backward(loss);
    const auto& g = store.grad("logits").v;
    CHECK(g[2] < 0.0);  // gradient descent raises the chosen logit
    CHECK(g[0] > 0.0);
    CHECK(g[1] > 0.0);
  }

  TEST_CASE("a2c loss rejects mismatched step counts") {
    ad::Tape t;
    ad::Var s = t.scalar(0.0);
    CHECK_THROWS_AS(a2c_loss(t, {s}, {s, s}, {s}, {0.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(a2c_loss(t, {}, {}, {}, {}, 0.0), std::invalid_argument);
  }

  TEST_CASE("rollout ends with one stop step and consistent bookkeeping") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params({c});
    RewardConfig cfg = reward_config_for(PolicyObjective::Importance);
    int nm = c.total_sentences();

    Rng rng(11);
    Trajectory traj = rollout(p, c, cfg, false, 4, rng);
    REQUIRE(!traj.steps.empty());
    CHECK(traj.steps.back().action == nm);
    for (std::size_t i = 0; i + 1 < traj.steps.size(); ++i) CHECK(traj.steps[i].action != nm);
    for (std::size_t i = 0; i < traj.steps.size(); ++i)
      CHECK(traj.steps[i].extracted_before.size() == i);

    auto summary = traj.summary_indices();
    CHECK(summary.size() + 1 == traj.steps.size());
    for (std::size_t i = 0; i + 1 < traj.steps.size(); ++i) {
      CHECK(traj.steps[i].reward ==
            doctest::Approx(sentence_reward(cfg, c, static_cast<int>(i), traj.steps[i].action)));
    }
    CHECK(traj.steps.back().reward == doctest::Approx(terminal_reward(c, summary)));
    double total = 0.0;
    for (const auto& s : traj.steps) total += s.reward;
    CHECK(traj.total_reward() == doctest::Approx(total));
  }

  TEST_CASE("rollouts are deterministic under a fixed seed") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params({c});
    RewardConfig cfg = reward_config_for(PolicyObjective::Importance);

    Rng g1(3), g2(3);
    auto a = rollout(p, c, cfg, true, 4, g1);
    auto b = rollout(p, c, cfg, true, 4, g2);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].action == b.steps[i].action);

    Rng g3(4), g4(5);
    auto c1 = rollout(p, c, cfg, false, 4, g3);
    auto c2 = rollout(p, c, cfg, false, 4, g4);
    REQUIRE(c1.steps.size() == c2.steps.size());
    for (std::size_t i = 0; i < c1.steps.size(); ++i) CHECK(c1.steps[i].action == c2.steps[i].action);
  }

  TEST_CASE("max_steps forces a stop step") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params({c});
    RewardConfig cfg = reward_config_for(PolicyObjective::Importance);
    int nm = c.total_sentences();

    int forced_seen = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      Trajectory traj = rollout(p, c, cfg, true, 1, rng);
      CHECK(traj.steps.size() <= 2);
      CHECK(traj.steps.back().action == nm);
      if (traj.forced_stop) {
        ++forced_seen;
        CHECK(traj.steps.size() == 2);
      }
    }
    CHECK(forced_seen > 0);
  }

  TEST_CASE("rollout validates its inputs") {
    Cluster c = toy_cluster();
    ExtractorParams p = toy_params({c});
    RewardConfig cfg;
    Rng rng(1);
    CHECK_THROWS_AS(rollout(p, c, cfg, false, 0, rng), std::invalid_argument);
    Cluster no_gold = c;
    no_gold.gold_summary.clear();
    CHECK_THROWS_AS(rollout(p, no_gold, cfg, false, 4, rng), std::invalid_argument);
  }

  TEST_CASE("warm start reduces the teacher-forced loss") {
    auto corpus = toy_corpus(6);
    ExtractorParams p = toy_params(corpus);
    WarmStartConfig cfg;
    cfg.epochs = 5;
    cfg.lr = 1e-2;
    cfg.batch = 3;
    auto curve = warm_start(p, corpus, cfg, Rng(7));
    REQUIRE(curve.size() == 5);
    for (double x : curve) CHECK(std::isfinite(x));
    CHECK(curve.back() < curve.front());
    CHECK_THROWS_AS(warm_start(p, {}, cfg, Rng(7)), std::invalid_argument);
  }

  TEST_CASE("actor-critic update applies exactly one optimizer step") {
    auto corpus = toy_corpus(2);
    ExtractorParams p = toy_params(corpus);
    RlConfig cfg;
    cfg.lr = 1e-3;
    cfg.max_steps = 3;
    RewardConfig rcfg = reward_config_for(PolicyObjective::Importance);

    Rng rng(21);
    std::vector<std::pair<const Cluster*, Trajectory>> batch;
    for (const auto& c : corpus) batch.emplace_back(&c, rollout(p, c, rcfg, true, cfg.max_steps, rng));

    double before = p.store.value("score.v").v[0];
    ad::AdamOptimizer opt(p.store);
    double loss = actor_critic_update(p, opt, batch, cfg);
    CHECK(std::isfinite(loss));
    CHECK(opt.steps_taken() == 1);
    CHECK(p.store.value("score.v").v[0] != before);
    CHECK_THROWS_AS(actor_critic_update(p, opt, {}, cfg), std::invalid_argument);
  }

  TEST_CASE("train_policy reports per-epoch stats and is seed-deterministic") {
    auto corpus = toy_corpus(3);
    RlConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.lr = 1e-4;
    cfg.max_steps = 3;

    ExtractorParams p1 = toy_params(corpus, 42);
    auto s1 = train_policy(p1, corpus, PolicyObjective::Importance, cfg, Rng(9));
    REQUIRE(s1.size() == 2);
    CHECK(s1[0].epoch == 0);
    CHECK(s1[1].epoch == 1);
    for (const auto& es : s1) {
      CHECK(std::isfinite(es.mean_reward));
      CHECK(std::isfinite(es.mean_loss));
      CHECK(es.mean_summary_len >= 0.0);
    }

    ExtractorParams p2 = toy_params(corpus, 42);
    auto s2 = train_policy(p2, corpus, PolicyObjective::Importance, cfg, Rng(9));
    REQUIRE(s2.size() == s1.size());
    for (std::size_t i = 0; i < s1.size(); ++i) {
      CHECK(s1[i].mean_reward == s2[i].mean_reward);
      CHECK(s1[i].mean_loss == s2[i].mean_loss);
    }
    CHECK(p1.store.value("score.v").v == p2.store.value("score.v").v);
  }

  TEST_CASE("mean greedy reward is finite and repeatable") {
    auto corpus = toy_corpus(3);
    ExtractorParams p = toy_params(corpus);
    RewardConfig cfg = reward_config_for(PolicyObjective::Importance);
    double a = mean_greedy_reward(p, corpus, cfg, 3);
    double b = mean_greedy_reward(p, corpus, cfg, 3);
    CHECK(std::isfinite(a));
    CHECK(a == b);
    CHECK_THROWS_AS(mean_greedy_reward(p, {}, cfg, 3), std::invalid_argument);
  }

  TEST_CASE("random tabular mdps are well-formed") {
    Rng rng(17);
    TabularMdp m = TabularMdp::random(5, 3, 0.9, rng);
    CHECK(m.n_states == 5);
    CHECK(m.n_actions == 3);
    double init_total = 0.0;
    for (double x : m.initial) init_total += x;
    CHECK(init_total == doctest::Approx(1.0).epsilon(1e-12));
    for (int s = 0; s < m.n_states; ++s)
      for (int a = 0; a < m.n_actions; ++a) {
        double row = 0.0;
        for (int s2 = 0; s2 < m.n_states; ++s2) {
          CHECK(m.p(s, a, s2) > 0.0);
          row += m.p(s, a, s2);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
      }
  }

  TEST_CASE("policy evaluation solves the self-loop fixture exactly") {
    TabularMdp m = two_state_self_loop();
    TabularPolicy pi = {1.0, 1.0};
    auto v = evaluate_policy(m, pi);
    REQUIRE(v.size() == 2);
    CHECK(v[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(4.0).epsilon(1e-12));
  }

  TEST_CASE("policy evaluation solves the mixing-chain fixture") {
    TabularMdp m;
    m.n_states = 2;
    m.n_actions = 1;
    m.gamma = 0.5;
    m.transitions = {0.5, 0.5, 0.5, 0.5};
    m.rewards = {1.0, 0.0};
    m.initial = {1.0, 0.0};
    auto v = evaluate_policy(m, {1.0, 1.0});
    CHECK(v[0] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("policy inputs are validated") {
    TabularMdp m = two_state_self_loop();
    CHECK_THROWS_AS(evaluate_policy(m, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_policy(m, {0.5, 1.0}), std::invalid_argument);
    CHECK_THROWS_AS(performance_difference_check(m, {1.0, 1.0}, {0.7, 1.0}), std::invalid_argument);
  }

  TEST_CASE("performance difference vanishes for identical policies") {
    Rng rng(23);
    TabularMdp m = TabularMdp::random(4, 3, 0.9, rng);
    TabularPolicy pi = random_policy(m, rng);
    auto res = performance_difference_check(m, pi, pi);
    CHECK(std::abs(res.lhs) < 1e-12);
    CHECK(res.gap < 1e-12);
  }

  TEST_CASE("performance difference identity holds on random pairs") {
    Rng rng(31);
    double worst = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
      int n = 2 + static_cast<int>(rng.uniform_int(3));
      int k = 2 + static_cast<int>(rng.uniform_int(2));
      TabularMdp m = TabularMdp::random(n, k, 0.9, rng);
      TabularPolicy mix = random_policy(m, rng);
      TabularPolicy imp = random_policy(m, rng);
      auto res = performance_difference_check(m, mix, imp);
      CHECK(std::isfinite(res.lhs));
      worst = std::max(worst, res.gap);
    }
    CHECK(worst < 1e-8);
  }
}
