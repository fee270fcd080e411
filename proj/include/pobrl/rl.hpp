#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pobrl/autodiff.hpp"
#include "pobrl/corpus.hpp"
#include "pobrl/extractor.hpp"
#include "pobrl/rng.hpp"

namespace pobrl {

enum class SentenceMetric { RougeLF1, RougeLPrecision };
enum class PolicyObjective { Importance, Redundancy };

struct RewardConfig {
  SentenceMetric sentence_metric = SentenceMetric::RougeLF1;
  double gamma = 0.99;
};

RewardConfig reward_config_for(PolicyObjective objective);

// Per-extraction reward: sentence metric of the chosen sentence against the
// gold sentence aligned to this extraction index; 0 past the gold length.
double sentence_reward(const RewardConfig& config, const Cluster& cluster, int extraction_index, int global_sentence);

// Terminal reward on STOP: ROUGE-1 F1 of the extracted summary stream against
// the gold stream. An empty summary scores 0.
double terminal_reward(const Cluster& cluster, const std::vector<int>& extracted);

struct TrajectoryStep {
  std::vector<int> extracted_before;  // extraction order prior to this action
  int action = 0;                     // global sentence index, or nm for STOP
  double reward = 0.0;
  double value = 0.0;                 // critic estimate V(X_t) at decision time
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;  // ends with exactly one STOP step
  bool forced_stop = false;

  std::vector<int> summary_indices() const;
  double total_reward() const;
};

// Runs the policy on one cluster until STOP or max_steps extractions (then a
// STOP step is forced). sample=false decodes greedily.
Trajectory rollout(ExtractorParams& params, const Cluster& cluster, const RewardConfig& config, bool sample,
                   int max_steps, Rng& rng);

// Q_t = sum_{k>=t} gamma^{k-t} r_k, computed by the backward recursion
// Q_t = r_t + gamma * Q_{t+1}.
std::vector<double> discounted_returns(const Trajectory& trajectory, double gamma);

// A_t = Q_t - V_t with the critic values recorded in the trajectory.
std::vector<double> advantage(const Trajectory& trajectory, double gamma);

// Shared actor-critic loss: sum_t of -log pi(a_t) * A_t (advantage constant)
// plus (V_t - Q_t)^2 minus the entropy bonus. Used both by the extractor
// update and by tabular-policy sanity checks.
ad::Var a2c_loss(ad::Tape& tape, const std::vector<ad::Var>& chosen_log_probs, const std::vector<ad::Var>& values,
                 const std::vector<ad::Var>& entropies, const std::vector<double>& returns, double entropy_bonus);

struct WarmStartConfig {
  int epochs = 10;
  double lr = 1e-3;
  int batch = 64;
  double grad_clip = 2.0;
};

// Teacher-forced NLL training along oracle labels, STOP step included.
// Distributions are unmasked here so duplicate oracle labels stay in support.
// Returns the per-epoch mean loss curve.
std::vector<double> warm_start(ExtractorParams& params, const std::vector<Cluster>& corpus,
                               const WarmStartConfig& config, Rng rng);

struct RlConfig {
  RewardConfig reward;
  int epochs = 5;
  int batch_size = 32;
  double lr = 1e-7;
  double entropy_bonus = 0.01;
  double grad_clip = 2.0;
  int max_steps = 12;
  bool sample = true;
};

// One optimizer step over a batch of recorded trajectories: each is replayed
// teacher-forced on a fresh tape, gradients accumulate, then Adam applies the
// clipped update. Returns the batch mean loss.
double actor_critic_update(ExtractorParams& params, ad::AdamOptimizer& optimizer,
                           const std::vector<std::pair<const Cluster*, Trajectory>>& batch, const RlConfig& config);

struct EpochStats {
  int epoch = 0;
  double mean_reward = 0.0;
  double mean_loss = 0.0;
  double mean_summary_len = 0.0;
};

// Full A2C fine-tuning loop for one objective over the corpus.
std::vector<EpochStats> train_policy(ExtractorParams& params, const std::vector<Cluster>& corpus,
                                     PolicyObjective objective, const RlConfig& config, Rng rng);

// Mean greedy-rollout total reward over the corpus (regression guard).
double mean_greedy_reward(ExtractorParams& params, const std::vector<Cluster>& corpus, const RewardConfig& config,
                          int max_steps);

// Verification-scale MDP with dense tabular transitions and rewards.
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.9;
  std::vector<double> transitions;  // [s][a][s'], each (s,a) row sums to 1
  std::vector<double> rewards;      // [s][a]
  std::vector<double> initial;      // distribution over states

  double p(int s, int a, int s2) const {
    return transitions[static_cast<std::size_t>((s * n_actions + a) * n_states + s2)];
  }
  double r(int s, int a) const { return rewards[static_cast<std::size_t>(s * n_actions + a)]; }

  static TabularMdp random(int n_states, int n_actions, double gamma, Rng& rng);
};

// Row-stochastic policy [s][a].
using TabularPolicy = std::vector<double>;

TabularPolicy random_policy(const TabularMdp& mdp, Rng& rng);

// Exact policy evaluation: solves (I - gamma * P_pi) V = r_pi.
std::vector<double> evaluate_policy(const TabularMdp& mdp, const TabularPolicy& pi);

struct PerfDiffResult {
  double lhs = 0.0;  // eta(pi_mix) - eta(pi_imp)
  double rhs = 0.0;  // occupancy-weighted advantage sum
  double gap = 0.0;
};

// Checks the performance-difference identity between two policies using exact
// linear-system evaluation on both sides.
PerfDiffResult performance_difference_check(const TabularMdp& mdp, const TabularPolicy& pi_mix,
                                            const TabularPolicy& pi_imp);

}  // namespace pobrl
