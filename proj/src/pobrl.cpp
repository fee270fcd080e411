#include "pobrl/pobrl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pobrl {

namespace {

constexpr double kFloor = 1e-8;

void check_blend_inputs(const std::vector<double>& p_imp, const std::vector<double>& p_red, double lambda,
                        const std::vector<bool>& mask) {
  if (p_imp.empty() || p_imp.size() != p_red.size() || p_imp.size() != mask.size())
    throw std::invalid_argument("blend_distributions: mask mismatch between inputs");
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i] && (p_imp[i] != 0.0 || p_red[i] != 0.0))
      throw std::invalid_argument("blend_distributions: mask mismatch between inputs");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("blend_distributions: lambda must be in [0,1]");
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
    throw std::invalid_argument("blend_distributions: no unmasked slot");
}

}  // namespace

BlendedDistribution blend_distributions(const std::vector<double>& p_imp, const std::vector<double>& p_red,
                                        double lambda, const std::vector<bool>& mask) {
  check_blend_inputs(p_imp, p_red, lambda, mask);

  BlendedDistribution out;
  out.lambda_used = lambda;
  if (lambda == 1.0) {
    out.probs = p_imp;
    out.raw_scores = p_imp;
    return out;
  }

  const std::size_t n = p_imp.size();
  out.raw_scores.assign(n, 0.0);
  bool any_positive = false;
  double min_raw = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double raw = lambda * p_imp[i] - (1.0 - lambda) * p_red[i];
    out.raw_scores[i] = raw;
    any_positive = any_positive || raw > 0.0;
    min_raw = std::min(min_raw, raw);
  }

  out.probs.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double raw = out.raw_scores[i];
    double w = any_positive ? (raw < 0.0 ? kFloor : raw) : raw - min_raw + kFloor;
    out.probs[i] = w;
    total += w;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) out.probs[i] /= total;
  return out;
}

double adaptive_lambda(double a_imp, double a_red) {
  if (!std::isfinite(a_imp) || !std::isfinite(a_red))
    throw std::invalid_argument("adaptive_lambda: advantages must be finite");
  double d = a_imp - a_red;
  double lam = d >= 0.0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
  lam = std::max(lam, std::numeric_limits<double>::min());
  lam = std::min(lam, std::nextafter(1.0, 0.0));
  return lam;
}

namespace {

// Advantage proxy for the adaptive weight: discount the critic's value of the
// state reached by this policy's own greedy pool candidate, minus the current
// value. An empty pool leaves only STOP, whose continuation value is 0.
double lookahead_advantage(ad::Tape& tape, const ClusterDecoder& decoder, const ClusterDecoder::StepOutput& out,
                           int nm, double gamma) {
  int best = -1;
  double best_p = -1.0;
  for (int i = 0; i < nm; ++i)
    if (out.allow[static_cast<std::size_t>(i)] && out.dist.probs[static_cast<std::size_t>(i)] > best_p) {
      best_p = out.dist.probs[static_cast<std::size_t>(i)];
      best = i;
    }
  double v_now = tape.scalar_val(out.value);
  if (best < 0) return -v_now;
  return gamma * decoder.peek_value(best) - v_now;
}

void check_summarize_config(const BlendConfig& config) {
  if (config.max_steps < 1) throw std::invalid_argument("summarize: max_steps must be >= 1");
  if (config.lambda_mode == LambdaMode::Fixed && !(config.fixed_lambda >= 0.0 && config.fixed_lambda <= 1.0))
    throw std::invalid_argument("summarize: fixed lambda must be in [0,1]");
}

}  // namespace

PobrlSummary pobrl_summarize(const Cluster& cluster, ExtractorParams& params_imp, ExtractorParams& params_red,
                             const BlendConfig& config, Rng& rng) {
  check_summarize_config(config);
  if (cluster.total_sentences() < 1) throw std::invalid_argument("summarize: cluster has no sentences");

  ad::Tape tape_imp, tape_red;
  ClusterDecoder dec_imp(tape_imp, params_imp, cluster);
  ClusterDecoder dec_red(tape_red, params_red, cluster);
  PoolState state(cluster);
  const int nm = cluster.total_sentences();

  PobrlSummary out;
  int prev = -1;
  while (true) {
    auto step_imp = dec_imp.step(state, prev, true);
    auto step_red = dec_red.step(state, prev, true);

    double lam = config.fixed_lambda;
    if (config.lambda_mode == LambdaMode::Adaptive)
      lam = adaptive_lambda(lookahead_advantage(tape_imp, dec_imp, step_imp, nm, config.gamma),
                            lookahead_advantage(tape_red, dec_red, step_red, nm, config.gamma));

    BlendedDistribution blended = blend_distributions(step_imp.dist.probs, step_red.dist.probs, lam, step_imp.allow);

    ExtractionDistribution selector;
    selector.probs = blended.probs;
    selector.mask = step_imp.allow;
    int chosen = config.decoding == Decoding::Greedy ? selector.argmax() : selector.sample(rng);

    StepTrace trace;
    trace.step = static_cast<int>(out.trace.size());
    trace.lambda = lam;
    trace.index = chosen == nm ? -1 : chosen;
    trace.probs = blended.probs;
    out.trace.push_back(std::move(trace));

    if (chosen == nm) break;
    out.indices.push_back(chosen);
    state.extract(chosen);
    prev = chosen;
    if (static_cast<int>(out.indices.size()) >= config.max_steps) break;
  }
  return out;
}

PobrlSummary single_policy_summarize(const Cluster& cluster, ExtractorParams& params, const BlendConfig& config,
                                     Rng& rng) {
  check_summarize_config(config);
  if (cluster.total_sentences() < 1) throw std::invalid_argument("summarize: cluster has no sentences");

  ad::Tape tape;
  ClusterDecoder decoder(tape, params, cluster);
  PoolState state(cluster);
  const int nm = cluster.total_sentences();

  PobrlSummary out;
  int prev = -1;
  while (true) {
    auto step = decoder.step(state, prev, true);
    int chosen = config.decoding == Decoding::Greedy ? step.dist.argmax() : step.dist.sample(rng);

    StepTrace trace;
    trace.step = static_cast<int>(out.trace.size());
    trace.lambda = 1.0;
    trace.index = chosen == nm ? -1 : chosen;
    trace.probs = step.dist.probs;
    out.trace.push_back(std::move(trace));

    if (chosen == nm) break;
    out.indices.push_back(chosen);
    state.extract(chosen);
    prev = chosen;
    if (static_cast<int>(out.indices.size()) >= config.max_steps) break;
  }
  return out;
}

}  // namespace pobrl
