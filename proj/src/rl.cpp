#include "pobrl/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pobrl/rouge.hpp"

namespace pobrl {

RewardConfig reward_config_for(PolicyObjective objective) {
  RewardConfig c;
  c.sentence_metric = objective == PolicyObjective::Importance ? SentenceMetric::RougeLF1 : SentenceMetric::RougeLPrecision;
  return c;
}

double sentence_reward(const RewardConfig& config, const Cluster& cluster, int extraction_index, int global_sentence) {
  if (extraction_index >= static_cast<int>(cluster.gold_summary.size())) return 0.0;
  const auto& gold = cluster.gold_summary[static_cast<std::size_t>(extraction_index)];
  RougeScore s = rouge_l(cluster.sentence_at(global_sentence).tokens, gold.tokens);
  return config.sentence_metric == SentenceMetric::RougeLF1 ? s.f1 : s.precision;
}

double terminal_reward(const Cluster& cluster, const std::vector<int>& extracted) {
  std::vector<Token> system;
  for (int g : extracted) {
    const auto& toks = cluster.sentence_at(g).tokens;
    system.insert(system.end(), toks.begin(), toks.end());
  }
  std::vector<Token> gold;
  for (const auto& s : cluster.gold_summary) gold.insert(gold.end(), s.tokens.begin(), s.tokens.end());
  return rouge_n(system, gold, 1).f1;
}

std::vector<int> Trajectory::summary_indices() const {
  std::vector<int> out;
  if (steps.empty()) return out;
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) out.push_back(steps[i].action);
  return out;
}

double Trajectory::total_reward() const {
  double r = 0.0;
  for (const auto& s : steps) r += s.reward;
  return r;
}

Trajectory rollout(ExtractorParams& params, const Cluster& cluster, const RewardConfig& config, bool sample,
                   int max_steps, Rng& rng) {
  if (cluster.gold_summary.empty()) throw std::invalid_argument("rollout: cluster '" + cluster.id + "' has no gold summary");
  if (max_steps < 1) throw std::invalid_argument("rollout: max_steps must be >= 1");

  ad::Tape tape;
  ClusterDecoder decoder(tape, params, cluster);
  PoolState state(cluster);
  const int nm = cluster.total_sentences();

  Trajectory traj;
  int prev = -1;
  while (true) {
    auto out = decoder.step(state, prev, true);
    int action = sample ? out.dist.sample(rng) : out.dist.argmax();

    int extracted_so_far = static_cast<int>(state.extracted().size());
    bool force_stop = action < nm && extracted_so_far >= max_steps;
    if (force_stop) {
      action = nm;
      traj.forced_stop = true;
    }

    TrajectoryStep step;
    step.extracted_before = state.extracted();
    step.action = action;
    step.value = tape.scalar_val(out.value);

    if (action == nm) {
      step.reward = terminal_reward(cluster, state.extracted());
      traj.steps.push_back(std::move(step));
      break;
    }
    step.reward = sentence_reward(config, cluster, extracted_so_far, action);
    traj.steps.push_back(std::move(step));
    state.extract(action);
    prev = action;
  }
  return traj;
}

std::vector<double> discounted_returns(const Trajectory& trajectory, double gamma) {
  std::vector<double> q(trajectory.steps.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = trajectory.steps.size(); i-- > 0;) {
    acc = trajectory.steps[i].reward + gamma * acc;
    q[i] = acc;
  }
  return q;
}

std::vector<double> advantage(const Trajectory& trajectory, double gamma) {
  std::vector<double> a = discounted_returns(trajectory, gamma);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= trajectory.steps[i].value;
  return a;
}

ad::Var a2c_loss(ad::Tape& tape, const std::vector<ad::Var>& chosen_log_probs, const std::vector<ad::Var>& values,
                 const std::vector<ad::Var>& entropies, const std::vector<double>& returns, double entropy_bonus) {
  if (chosen_log_probs.size() != values.size() || values.size() != entropies.size() ||
      entropies.size() != returns.size() || returns.empty())
    throw std::invalid_argument("a2c_loss: mismatched step counts");
  ad::Var loss = tape.scalar(0.0);
  for (std::size_t t = 0; t < returns.size(); ++t) {
    double adv = returns[t] - tape.scalar_val(values[t]);  // constant wrt the graph
    ad::Var policy = tape.scale(chosen_log_probs[t], -adv);
    ad::Var diff = tape.sub(values[t], tape.scalar(returns[t]));
    ad::Var critic = tape.mul(diff, diff);
    loss = tape.add(loss, tape.add(policy, critic));
    if (entropy_bonus != 0.0) loss = tape.add(loss, tape.scale(entropies[t], -entropy_bonus));
  }
  return loss;
}

namespace {

void deterministic_shuffle(std::vector<int>& order, Rng rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)));
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

std::vector<double> warm_start(ExtractorParams& params, const std::vector<Cluster>& corpus,
                               const WarmStartConfig& config, Rng rng) {
  if (corpus.empty()) throw std::invalid_argument("warm_start: empty corpus");
  std::vector<OracleLabels> labels;
  labels.reserve(corpus.size());
  for (const auto& c : corpus) labels.push_back(oracle_labels(c));

  ad::AdamOptimizer optimizer(params.store);
  std::vector<double> curve;
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    deterministic_shuffle(order, rng.fork(static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch)) {
      std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch));
      params.store.zero_grads();
      for (std::size_t i = begin; i < end; ++i) {
        const Cluster& cluster = corpus[static_cast<std::size_t>(order[i])];
        const OracleLabels& label = labels[static_cast<std::size_t>(order[i])];
        const int nm = cluster.total_sentences();

        ad::Tape tape;
        ClusterDecoder decoder(tape, params, cluster);
        PoolState state(cluster);  // unused under masked=false, but fixes the slot count

        std::vector<int> actions = label.labels;
        actions.push_back(nm);

        int prev = -1;
        ad::Var nll = tape.scalar(0.0);
        for (int action : actions) {
          auto out = decoder.step(state, prev, false);
          nll = tape.add(nll, tape.scale(tape.pick(out.log_probs, action), -1.0));
          if (action < nm) prev = action;
        }
        tape.backward(tape.scale(nll, 1.0 / static_cast<double>(end - begin)));
        epoch_loss += tape.scalar_val(nll);
      }
      optimizer.step(config.lr, config.grad_clip);
    }
    curve.push_back(epoch_loss / static_cast<double>(corpus.size()));
  }
  return curve;
}

double actor_critic_update(ExtractorParams& params, ad::AdamOptimizer& optimizer,
                           const std::vector<std::pair<const Cluster*, Trajectory>>& batch, const RlConfig& config) {
  if (batch.empty()) throw std::invalid_argument("actor_critic_update: empty batch");
  params.store.zero_grads();
  double total = 0.0;
  for (const auto& [cluster, traj] : batch) {
    const int nm = cluster->total_sentences();
    ad::Tape tape;
    ClusterDecoder decoder(tape, params, *cluster);
    PoolState state(*cluster);
    std::vector<double> returns = discounted_returns(traj, config.reward.gamma);

    std::vector<ad::Var> lps, values, entropies;
    int prev = -1;
    for (const auto& step : traj.steps) {
      auto out = decoder.step(state, prev, true);
      lps.push_back(tape.pick(out.log_probs, step.action));
      values.push_back(out.value);
      entropies.push_back(out.entropy);
      if (step.action < nm) {
        state.extract(step.action);
        prev = step.action;
      }
    }
    ad::Var loss = a2c_loss(tape, lps, values, entropies, returns, config.entropy_bonus);
    tape.backward(tape.scale(loss, 1.0 / static_cast<double>(batch.size())));
    total += tape.scalar_val(loss);
  }
  optimizer.step(config.lr, config.grad_clip);
  return total / static_cast<double>(batch.size());
}

std::vector<EpochStats> train_policy(ExtractorParams& params, const std::vector<Cluster>& corpus,
                                     PolicyObjective objective, const RlConfig& config, Rng rng) {
  if (corpus.empty()) throw std::invalid_argument("train_policy: empty corpus");
  RlConfig cfg = config;
  cfg.reward.sentence_metric = reward_config_for(objective).sentence_metric;

  ad::AdamOptimizer optimizer(params.store);
  Rng sampler = rng.fork("rollout");
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochStats> stats;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    deterministic_shuffle(order, rng.fork(static_cast<std::uint64_t>(epoch)));
    EpochStats es;
    es.epoch = epoch;
    int episodes = 0, updates = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::pair<const Cluster*, Trajectory>> batch;
      for (std::size_t i = begin; i < end; ++i) {
        const Cluster& cluster = corpus[static_cast<std::size_t>(order[i])];
        Trajectory traj = rollout(params, cluster, cfg.reward, cfg.sample, cfg.max_steps, sampler);
        es.mean_reward += traj.total_reward();
        for (int g : traj.summary_indices())
          es.mean_summary_len += static_cast<double>(cluster.sentence_at(g).tokens.size());
        ++episodes;
        batch.emplace_back(&cluster, std::move(traj));
      }
      es.mean_loss += actor_critic_update(params, optimizer, batch, cfg);
      ++updates;
    }
    es.mean_reward /= static_cast<double>(episodes);
    es.mean_summary_len /= static_cast<double>(episodes);
    es.mean_loss /= static_cast<double>(updates);
    stats.push_back(es);
  }
  return stats;
}

double mean_greedy_reward(ExtractorParams& params, const std::vector<Cluster>& corpus, const RewardConfig& config,
                          int max_steps) {
  if (corpus.empty()) throw std::invalid_argument("mean_greedy_reward: empty corpus");
  Rng unused(0);
  double total = 0.0;
  for (const auto& cluster : corpus) total += rollout(params, cluster, config, false, max_steps, unused).total_reward();
  return total / static_cast<double>(corpus.size());
}

TabularMdp TabularMdp::random(int n_states, int n_actions, double gamma, Rng& rng) {
  TabularMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.transitions.resize(static_cast<std::size_t>(n_states * n_actions * n_states));
  m.rewards.resize(static_cast<std::size_t>(n_states * n_actions));
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        double w = rng.uniform() + 1e-3;
        m.transitions[static_cast<std::size_t>((s * n_actions + a) * n_states + s2)] = w;
        total += w;
      }
      for (int s2 = 0; s2 < n_states; ++s2)
        m.transitions[static_cast<std::size_t>((s * n_actions + a) * n_states + s2)] /= total;
      m.rewards[static_cast<std::size_t>(s * n_actions + a)] = rng.uniform();
    }
  }
  m.initial.resize(static_cast<std::size_t>(n_states));
  double total = 0.0;
  for (int s = 0; s < n_states; ++s) {
    m.initial[static_cast<std::size_t>(s)] = rng.uniform() + 1e-3;
    total += m.initial[static_cast<std::size_t>(s)];
  }
  for (double& x : m.initial) x /= total;
  return m;
}

TabularPolicy random_policy(const TabularMdp& mdp, Rng& rng) {
  TabularPolicy pi(static_cast<std::size_t>(mdp.n_states * mdp.n_actions));
  for (int s = 0; s < mdp.n_states; ++s) {
    double total = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      double w = rng.uniform() + 1e-3;
      pi[static_cast<std::size_t>(s * mdp.n_actions + a)] = w;
      total += w;
    }
    for (int a = 0; a < mdp.n_actions; ++a) pi[static_cast<std::size_t>(s * mdp.n_actions + a)] /= total;
  }
  return pi;
}

namespace {

// Dense Gaussian elimination with partial pivoting; n stays <= 16 here.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b) {
  const int n = static_cast<int>(b.size());
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[static_cast<std::size_t>(r * n + col)]) > std::abs(a[static_cast<std::size_t>(pivot * n + col)])) pivot = r;
    if (std::abs(a[static_cast<std::size_t>(pivot * n + col)]) < 1e-12)
      throw std::runtime_error("performance difference: singular evaluation system");
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a[static_cast<std::size_t>(pivot * n + c)], a[static_cast<std::size_t>(col * n + c)]);
      std::swap(b[static_cast<std::size_t>(pivot)], b[static_cast<std::size_t>(col)]);
    }
    double d = a[static_cast<std::size_t>(col * n + col)];
    for (int r = col + 1; r < n; ++r) {
      double f = a[static_cast<std::size_t>(r * n + col)] / d;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a[static_cast<std::size_t>(r * n + c)] -= f * a[static_cast<std::size_t>(col * n + c)];
      b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(col)];
    }
  }
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[static_cast<std::size_t>(r)];
    for (int c = r + 1; c < n; ++c) acc -= a[static_cast<std::size_t>(r * n + c)] * x[static_cast<std::size_t>(c)];
    x[static_cast<std::size_t>(r)] = acc / a[static_cast<std::size_t>(r * n + r)];
  }
  return x;
}

void check_policy(const TabularMdp& mdp, const TabularPolicy& pi, const char* name) {
  if (static_cast<int>(pi.size()) != mdp.n_states * mdp.n_actions)
    throw std::invalid_argument(std::string(name) + ": policy size mismatch");
  for (int s = 0; s < mdp.n_states; ++s) {
    double total = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a) total += pi[static_cast<std::size_t>(s * mdp.n_actions + a)];
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument(std::string(name) + ": policy row does not sum to 1");
  }
}

}  // namespace

std::vector<double> evaluate_policy(const TabularMdp& mdp, const TabularPolicy& pi) {
  check_policy(mdp, pi, "evaluate_policy");
  const int n = mdp.n_states;
  std::vector<double> system(static_cast<std::size_t>(n * n), 0.0);
  std::vector<double> r_pi(static_cast<std::size_t>(n), 0.0);
  for (int s = 0; s < n; ++s) {
    system[static_cast<std::size_t>(s * n + s)] = 1.0;
    for (int a = 0; a < mdp.n_actions; ++a) {
      double w = pi[static_cast<std::size_t>(s * mdp.n_actions + a)];
      r_pi[static_cast<std::size_t>(s)] += w * mdp.r(s, a);
      for (int s2 = 0; s2 < n; ++s2) system[static_cast<std::size_t>(s * n + s2)] -= mdp.gamma * w * mdp.p(s, a, s2);
    }
  }
  return solve_linear(std::move(system), std::move(r_pi));
}

PerfDiffResult performance_difference_check(const TabularMdp& mdp, const TabularPolicy& pi_mix,
                                            const TabularPolicy& pi_imp) {
  check_policy(mdp, pi_mix, "performance_difference_check(pi_mix)");
  check_policy(mdp, pi_imp, "performance_difference_check(pi_imp)");
  const int n = mdp.n_states;

  std::vector<double> v_imp = evaluate_policy(mdp, pi_imp);
  std::vector<double> v_mix = evaluate_policy(mdp, pi_mix);

  double eta_imp = 0.0, eta_mix = 0.0;
  for (int s = 0; s < n; ++s) {
    eta_imp += mdp.initial[static_cast<std::size_t>(s)] * v_imp[static_cast<std::size_t>(s)];
    eta_mix += mdp.initial[static_cast<std::size_t>(s)] * v_mix[static_cast<std::size_t>(s)];
  }

  // Discounted state occupancy of the mixed policy: (I - gamma * P_mix^T) d = d0.
  std::vector<double> system(static_cast<std::size_t>(n * n), 0.0);
  for (int s = 0; s < n; ++s) system[static_cast<std::size_t>(s * n + s)] = 1.0;
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < mdp.n_actions; ++a) {
      double w = pi_mix[static_cast<std::size_t>(s * mdp.n_actions + a)];
      for (int s2 = 0; s2 < n; ++s2)
        system[static_cast<std::size_t>(s2 * n + s)] -= mdp.gamma * w * mdp.p(s, a, s2);
    }
  std::vector<double> occupancy = solve_linear(std::move(system), mdp.initial);

  double rhs = 0.0;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double q = mdp.r(s, a);
      for (int s2 = 0; s2 < n; ++s2) q += mdp.gamma * mdp.p(s, a, s2) * v_imp[static_cast<std::size_t>(s2)];
      double adv = q - v_imp[static_cast<std::size_t>(s)];
      rhs += occupancy[static_cast<std::size_t>(s)] * pi_mix[static_cast<std::size_t>(s * mdp.n_actions + a)] * adv;
    }
  }

  PerfDiffResult out;
  out.lhs = eta_mix - eta_imp;
  out.rhs = rhs;
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

}  // namespace pobrl
