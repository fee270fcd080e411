#pragma once

#include <vector>

#include "pobrl/corpus.hpp"
#include "pobrl/extractor.hpp"
#include "pobrl/rng.hpp"

namespace pobrl {

enum class LambdaMode { Fixed, Adaptive };
enum class Decoding { Greedy, Sample };

struct BlendConfig {
  LambdaMode lambda_mode = LambdaMode::Fixed;
  double fixed_lambda = 0.5;
  Decoding decoding = Decoding::Greedy;
  int max_steps = 12;
  double gamma = 0.99;  // discount for the adaptive one-step critic lookahead
};

struct BlendedDistribution {
  std::vector<double> probs;       // valid masked distribution, length nm+1
  double lambda_used = 0.0;
  std::vector<double> raw_scores;  // lambda*p_imp - (1-lambda)*p_red, pre-clamp
};

// MMR-form combination of the two policies' extraction distributions.
// lambda=1 returns p_imp unchanged. Otherwise negative raw entries are
// clamped to a 1e-8 floor and the result renormalized; when no unmasked raw
// entry is positive, the whole vector is shifted above zero first so the raw
// ordering survives (at lambda=0 the argmax must land on the least redundant
// slot, degenerating to uniform only when all raw entries tie).
BlendedDistribution blend_distributions(const std::vector<double>& p_imp, const std::vector<double>& p_red,
                                        double lambda, const std::vector<bool>& mask);

// lambda_t = logistic(a_imp - a_red), clamped to the open interval (0,1).
double adaptive_lambda(double a_imp, double a_red);

struct StepTrace {
  int step = 0;
  double lambda = 0.0;
  int index = -1;  // chosen global sentence index; -1 on the STOP step
  std::vector<double> probs;
};

struct PobrlSummary {
  std::vector<int> indices;  // extraction order, no duplicates
  std::vector<StepTrace> trace;
};

// Full blended extraction loop: both decoders advance on the jointly chosen
// sentence, lambda is fixed or recomputed per step from each policy's greedy
// one-step critic lookahead, and selection stops on STOP or after max_steps
// extractions.
PobrlSummary pobrl_summarize(const Cluster& cluster, ExtractorParams& params_imp, ExtractorParams& params_red,
                             const BlendConfig& config, Rng& rng);

// Decode one policy alone; matches the blended loop at lambda=1.
PobrlSummary single_policy_summarize(const Cluster& cluster, ExtractorParams& params, const BlendConfig& config,
                                     Rng& rng);

}  // namespace pobrl
