#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pobrl/autodiff.hpp"
#include "pobrl/corpus.hpp"
#include "pobrl/rng.hpp"

namespace pobrl {

struct ExtractorConfig {
  int embed_dim = 128;
  std::vector<int> conv_windows = {3, 4, 5};
  int conv_filters = 100;  // per window
  int article_hidden = 256;
  int article_layers = 2;
  int pointer_hidden = 256;
  int attention_dim = 256;
  int min_token_freq = 2;

  int sentence_dim() const { return conv_filters * static_cast<int>(conv_windows.size()); }
  int article_state_dim() const { return 2 * article_hidden; }

  std::vector<std::pair<std::string, std::string>> metadata() const;
  static ExtractorConfig from_metadata(const std::vector<std::pair<std::string, std::string>>& meta);
};

// Token-to-row lookup for the embedding matrix. Id 0 is the reserved UNK row;
// known tokens occupy 1..size()-1 in sorted order, which pins the layout for
// checkpoint reuse.
class Vocab {
 public:
  Vocab() = default;

  static Vocab build(const std::vector<Cluster>& corpus, int min_token_freq);
  static Vocab from_tokens(std::vector<Token> tokens);

  int id(const Token& t) const;
  int size() const { return static_cast<int>(tokens_.size()) + 1; }
  const std::vector<Token>& known() const { return tokens_; }
  std::uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<Token> tokens_;       // sorted, ids 1..n
  std::map<Token, int> index_;
};

// All learnable weights of one hierarchical extractor, plus the config and
// vocabulary they are shaped by. Parameter entries are created in a fixed
// order so checkpoints are byte-stable.
struct ExtractorParams {
  ExtractorConfig config;
  Vocab vocab;
  ad::ParamStore store;

  static ExtractorParams init(const ExtractorConfig& config, Vocab vocab, Rng rng);

  void save(const std::string& path, const std::vector<std::pair<std::string, std::string>>& extra_metadata = {}) const;
  static ExtractorParams load(const std::string& path, const Vocab& vocab);

  long long total_parameters() const { return store.total_parameters(); }
};

// Probability vector over the nm sentences plus the trailing STOP slot.
// Masked (already-extracted) slots are exactly 0; STOP is never masked.
struct ExtractionDistribution {
  std::vector<double> probs;  // length nm + 1
  std::vector<bool> mask;     // allow flags actually applied

  int stop_slot() const { return static_cast<int>(probs.size()) - 1; }
  int argmax() const;
  int sample(Rng& rng) const;
};

// Per-cluster tensors shared by every decode step: CNN sentence encodings,
// article-level bidirectional states (attention keys), pointer-encoder
// states, and the precomputed W_sent projections (last row = STOP).
struct EncodedCluster {
  int nm = 0;
  std::vector<ad::Var> sentence_enc;  // nm vectors [sentence_dim]
  ad::Var article_matrix;             // [nm, 2*article_hidden]
  std::vector<ad::Var> pointer_states;  // nm vectors [pointer_hidden]
  ad::Var score_matrix;               // [nm+1, attention_dim]
};

ad::Var encode_sentence(ad::Tape& tape, ExtractorParams& params, const std::vector<Token>& tokens);

// Bidirectional states per sentence, run independently per article, returned
// in global order.
std::vector<ad::Var> encode_article_level(ad::Tape& tape, ExtractorParams& params,
                                          const std::vector<ad::Var>& sentence_enc, const Cluster& cluster);

EncodedCluster encode_cluster(ad::Tape& tape, ExtractorParams& params, const Cluster& cluster);

// Dot-product attention of the (projected) decoder state over the article
// states; returns the context c_t.
ad::Var attention_context(ad::Tape& tape, ExtractorParams& params, const EncodedCluster& enc, ad::Var decoder_h);

// Raw pointer scores u over nm candidates plus STOP, given the context.
ad::Var pointer_scores(ad::Tape& tape, ExtractorParams& params, const EncodedCluster& enc, ad::Var context);

// One extraction episode over a cluster: owns the decoder recurrent state and
// appends each step to the caller's tape, so a whole episode is differentiable
// end to end. previous selection -1 means the start-of-decoding token.
class ClusterDecoder {
 public:
  ClusterDecoder(ad::Tape& tape, ExtractorParams& params, const Cluster& cluster);

  struct StepOutput {
    ExtractionDistribution dist;
    ad::Var log_probs;  // [nm+1]; masked entries are not consumable
    ad::Var value;      // [1], critic estimate V(X_t)
    ad::Var entropy;    // [1]
    std::vector<bool> allow;
  };

  // Advances the decoder on previous_selection's encoding and emits the
  // (optionally) pool-masked distribution. masked=false is the warm-start
  // teacher-forcing mode, where oracle label collisions stay in support.
  StepOutput step(const PoolState& state, int previous_selection, bool masked = true);

  // Critic value after hypothetically advancing on `selection`, without
  // committing the decoder state.
  double peek_value(int selection) const;

  const EncodedCluster& encoded() const { return enc_; }
  int steps_taken() const { return steps_; }

 private:
  ad::Tape* tape_;
  ExtractorParams* params_;
  const Cluster* cluster_;
  EncodedCluster enc_;
  ad::Tape::LstmState state_;
  int steps_ = 0;

  ad::Var input_encoding(int selection) const;
};

}  // namespace pobrl
