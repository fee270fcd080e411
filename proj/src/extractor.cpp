#include "pobrl/extractor.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace pobrl {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string meta_value(const std::vector<std::pair<std::string, std::string>>& meta, const std::string& key) {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  throw std::runtime_error("checkpoint metadata missing key: " + key);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> ExtractorConfig::metadata() const {
  std::string windows;
  for (std::size_t i = 0; i < conv_windows.size(); ++i) {
    if (i) windows += ",";
    windows += std::to_string(conv_windows[i]);
  }
  return {{"embed_dim", std::to_string(embed_dim)},
          {"conv_windows", windows},
          {"conv_filters", std::to_string(conv_filters)},
          {"article_hidden", std::to_string(article_hidden)},
          {"article_layers", std::to_string(article_layers)},
          {"pointer_hidden", std::to_string(pointer_hidden)},
          {"attention_dim", std::to_string(attention_dim)},
          {"min_token_freq", std::to_string(min_token_freq)}};
}

ExtractorConfig ExtractorConfig::from_metadata(const std::vector<std::pair<std::string, std::string>>& meta) {
  ExtractorConfig c;
  c.embed_dim = std::stoi(meta_value(meta, "embed_dim"));
  c.conv_windows.clear();
  std::string windows = meta_value(meta, "conv_windows");
  std::size_t pos = 0;
  while (pos < windows.size()) {
    std::size_t comma = windows.find(',', pos);
    if (comma == std::string::npos) comma = windows.size();
    c.conv_windows.push_back(std::stoi(windows.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  c.conv_filters = std::stoi(meta_value(meta, "conv_filters"));
  c.article_hidden = std::stoi(meta_value(meta, "article_hidden"));
  c.article_layers = std::stoi(meta_value(meta, "article_layers"));
  c.pointer_hidden = std::stoi(meta_value(meta, "pointer_hidden"));
  c.attention_dim = std::stoi(meta_value(meta, "attention_dim"));
  c.min_token_freq = std::stoi(meta_value(meta, "min_token_freq"));
  return c;
}

Vocab Vocab::build(const std::vector<Cluster>& corpus, int min_token_freq) {
  std::map<Token, int> freq;
  for (const auto& cluster : corpus)
    for (const auto& article : cluster.articles)
      for (const auto& sentence : article)
        for (const auto& t : sentence.tokens) ++freq[t];
  std::vector<Token> kept;
  for (const auto& [t, n] : freq)
    if (n >= min_token_freq) kept.push_back(t);
  return from_tokens(std::move(kept));
}

Vocab Vocab::from_tokens(std::vector<Token> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  for (const auto& t : tokens)
    if (!is_valid_token(t)) throw std::invalid_argument("vocab: invalid token '" + t + "'");
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = static_cast<int>(i) + 1;
  return v;
}

int Vocab::id(const Token& t) const {
  auto it = index_.find(t);
  return it == index_.end() ? 0 : it->second;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    h = fnv1a(h, t);
    h = fnv1a(h, "\n");
  }
  return h;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocab: " + path);
  for (const auto& t : tokens_) out << t << "\n";
  if (!out) throw std::runtime_error("vocab write failed: " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocab: " + path);
  std::vector<Token> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

ExtractorParams ExtractorParams::init(const ExtractorConfig& config, Vocab vocab, Rng rng) {
  ExtractorParams p;
  p.config = config;
  p.vocab = std::move(vocab);
  ad::ParamStore& s = p.store;

  const int emb = config.embed_dim;
  const int sd = config.sentence_dim();
  const int ah = config.article_hidden;
  const int asd = config.article_state_dim();
  const int ph = config.pointer_hidden;
  const int ad_ = config.attention_dim;

  auto weight = [&](const std::string& name, std::vector<int> shape) { s.add_uniform(name, std::move(shape), rng.fork(name)); };
  auto score_weight = [&](const std::string& name, std::vector<int> shape) {
    s.add_uniform(name, std::move(shape), rng.fork(name), 1.0);
  };
  auto bias = [&](const std::string& name, int n) { s.add(name, {n}); };

  weight("embed", {p.vocab.size(), emb});
  for (int w : config.conv_windows) {
    weight("conv" + std::to_string(w) + ".w", {config.conv_filters, w * emb});
    bias("conv" + std::to_string(w) + ".b", config.conv_filters);
  }
  for (int layer = 0; layer < config.article_layers; ++layer) {
    int in = layer == 0 ? sd : asd;
    for (const char* dir : {"fwd", "bwd"}) {
      std::string base = "art.l" + std::to_string(layer) + "." + dir;
      weight(base + ".wx", {4 * ah, in});
      weight(base + ".wh", {4 * ah, ah});
      bias(base + ".b", 4 * ah);
    }
  }
  weight("penc.wx", {4 * ph, sd});
  weight("penc.wh", {4 * ph, ph});
  bias("penc.b", 4 * ph);
  weight("pdec.wx", {4 * ph, sd});
  weight("pdec.wh", {4 * ph, ph});
  bias("pdec.b", 4 * ph);
  weight("att.proj", {asd, ph});
  score_weight("score.w_sent", {ad_, ph});
  score_weight("score.w_art", {ad_, asd});
  score_weight("score.v", {ad_});
  score_weight("stop.embed", {ph});
  weight("start.embed", {sd});
  weight("value.w", {ph});
  bias("value.b", 1);
  return p;
}

void ExtractorParams::save(const std::string& path, const std::vector<std::pair<std::string, std::string>>& extra_metadata) const {
  auto meta = config.metadata();
  meta.emplace_back("vocab_hash", std::to_string(vocab.hash()));
  for (const auto& kv : extra_metadata) meta.push_back(kv);
  ad::save_checkpoint(store, path, meta);
}

ExtractorParams ExtractorParams::load(const std::string& path, const Vocab& vocab) {
  ExtractorParams p;
  p.vocab = vocab;
  auto meta = ad::load_checkpoint(p.store, path);
  p.config = ExtractorConfig::from_metadata(meta);
  std::string stored_hash = meta_value(meta, "vocab_hash");
  std::string actual_hash = std::to_string(vocab.hash());
  if (stored_hash != actual_hash)
    throw std::runtime_error("checkpoint/vocab mismatch: checkpoint hash " + stored_hash + " vs vocab hash " + actual_hash);
  if (p.store.value("embed").rows() != vocab.size())
    throw std::runtime_error("checkpoint embed rows " + std::to_string(p.store.value("embed").rows()) +
                             " vs vocab size " + std::to_string(vocab.size()));
  return p;
}

int ExtractionDistribution::argmax() const {
  int best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

int ExtractionDistribution::sample(Rng& rng) const {
  double u = rng.uniform();
  double acc = 0.0;
  int last_allowed = stop_slot();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_allowed = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_allowed;  // absorb rounding shortfall onto the final slot
}

ad::Var encode_sentence(ad::Tape& tape, ExtractorParams& params, const std::vector<Token>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("encode_sentence: empty token sequence");
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(params.vocab.id(t));
  ad::Var embed = tape.param(params.store, "embed");
  ad::Var x = tape.rows(embed, ids);  // [t, embed_dim]

  std::vector<ad::Var> pooled;
  for (int w : params.config.conv_windows) {
    std::string base = "conv" + std::to_string(w);
    ad::Var conv = tape.conv1d(x, tape.param(params.store, base + ".w"), tape.param(params.store, base + ".b"), w);
    pooled.push_back(tape.max_over_time(tape.tanh(conv)));
  }
  return tape.concat(pooled);
}

namespace {

ad::Tape::BiLstmWeights bilstm_weights(ad::Tape& tape, ad::ParamStore& store, const std::string& base) {
  ad::Tape::BiLstmWeights w;
  w.fwd_wx = tape.param(store, base + ".fwd.wx");
  w.fwd_wh = tape.param(store, base + ".fwd.wh");
  w.fwd_b = tape.param(store, base + ".fwd.b");
  w.bwd_wx = tape.param(store, base + ".bwd.wx");
  w.bwd_wh = tape.param(store, base + ".bwd.wh");
  w.bwd_b = tape.param(store, base + ".bwd.b");
  return w;
}

}  // namespace

std::vector<ad::Var> encode_article_level(ad::Tape& tape, ExtractorParams& params,
                                          const std::vector<ad::Var>& sentence_enc, const Cluster& cluster) {
  std::vector<ad::Var> states;
  states.reserve(sentence_enc.size());
  std::size_t offset = 0;
  for (const auto& article : cluster.articles) {
    std::vector<ad::Var> layer_in(sentence_enc.begin() + static_cast<std::ptrdiff_t>(offset),
                                  sentence_enc.begin() + static_cast<std::ptrdiff_t>(offset + article.size()));
    offset += article.size();
    for (int layer = 0; layer < params.config.article_layers; ++layer) {
      auto w = bilstm_weights(tape, params.store, "art.l" + std::to_string(layer));
      layer_in = tape.bilstm_sequence(layer_in, w, params.config.article_hidden);
    }
    for (ad::Var v : layer_in) states.push_back(v);
  }
  return states;
}

EncodedCluster encode_cluster(ad::Tape& tape, ExtractorParams& params, const Cluster& cluster) {
  EncodedCluster enc;
  enc.nm = cluster.total_sentences();
  if (enc.nm == 0) throw std::invalid_argument("encode_cluster: cluster has no sentences");

  for (const auto* s : cluster.all_sentences()) enc.sentence_enc.push_back(encode_sentence(tape, params, s->tokens));

  auto article_states = encode_article_level(tape, params, enc.sentence_enc, cluster);
  enc.article_matrix = tape.stack_rows(article_states);

  ad::Var penc_wx = tape.param(params.store, "penc.wx");
  ad::Var penc_wh = tape.param(params.store, "penc.wh");
  ad::Var penc_b = tape.param(params.store, "penc.b");
  ad::Tape::LstmState st{tape.input(ad::Tensor::zeros({params.config.pointer_hidden})),
                         tape.input(ad::Tensor::zeros({params.config.pointer_hidden}))};
  for (int k = 0; k < enc.nm; ++k) {
    st = tape.lstm_cell(enc.sentence_enc[static_cast<std::size_t>(k)], st, penc_wx, penc_wh, penc_b);
    enc.pointer_states.push_back(st.h);
  }

  ad::Var w_sent = tape.param(params.store, "score.w_sent");
  std::vector<ad::Var> score_rows;
  score_rows.reserve(static_cast<std::size_t>(enc.nm) + 1);
  for (ad::Var e : enc.pointer_states) score_rows.push_back(tape.matvec(w_sent, e));
  score_rows.push_back(tape.matvec(w_sent, tape.param(params.store, "stop.embed")));
  enc.score_matrix = tape.stack_rows(score_rows);
  return enc;
}

ad::Var attention_context(ad::Tape& tape, ExtractorParams& params, const EncodedCluster& enc, ad::Var decoder_h) {
  ad::Var projected = tape.matvec(tape.param(params.store, "att.proj"), decoder_h);
  ad::Var scores = tape.matvec(enc.article_matrix, projected);
  ad::Var alpha = tape.softmax(scores);
  return tape.matvec_t(enc.article_matrix, alpha);
}

ad::Var pointer_scores(ad::Tape& tape, ExtractorParams& params, const EncodedCluster& enc, ad::Var context) {
  ad::Var shift = tape.matvec(tape.param(params.store, "score.w_art"), context);
  ad::Var pre = tape.tanh(tape.add_rowwise(enc.score_matrix, shift));
  return tape.matvec(pre, tape.param(params.store, "score.v"));
}

ClusterDecoder::ClusterDecoder(ad::Tape& tape, ExtractorParams& params, const Cluster& cluster)
    : tape_(&tape), params_(&params), cluster_(&cluster), enc_(encode_cluster(tape, params, cluster)) {
  state_.h = tape.input(ad::Tensor::zeros({params.config.pointer_hidden}));
  state_.c = tape.input(ad::Tensor::zeros({params.config.pointer_hidden}));
}

ad::Var ClusterDecoder::input_encoding(int selection) const {
  if (selection < 0) return tape_->param(params_->store, "start.embed");
  if (selection >= enc_.nm)
    throw std::out_of_range("decoder: selection " + std::to_string(selection) + " out of range");
  return enc_.sentence_enc[static_cast<std::size_t>(selection)];
}

ClusterDecoder::StepOutput ClusterDecoder::step(const PoolState& state, int previous_selection, bool masked) {
  ad::Tape& t = *tape_;
  state_ = t.lstm_cell(input_encoding(previous_selection), state_, t.param(params_->store, "pdec.wx"),
                       t.param(params_->store, "pdec.wh"), t.param(params_->store, "pdec.b"));

  ad::Var context = attention_context(t, *params_, enc_, state_.h);
  ad::Var scores = pointer_scores(t, *params_, enc_, context);

  std::vector<bool> allow(static_cast<std::size_t>(enc_.nm) + 1, true);
  if (masked) {
    for (int g = 0; g < enc_.nm; ++g) allow[static_cast<std::size_t>(g)] = state.is_available(g);
  }

  StepOutput out;
  out.allow = allow;
  out.log_probs = t.masked_log_softmax(scores, allow);
  out.value = t.add(t.dot(state_.h, t.param(params_->store, "value.w")), t.param(params_->store, "value.b"));
  out.entropy = t.entropy_from_log_probs(out.log_probs, allow);

  const auto& lp = t.val(out.log_probs);
  out.dist.probs.resize(lp.size());
  out.dist.mask = allow;
  for (std::size_t i = 0; i < lp.size(); ++i) out.dist.probs[i] = allow[i] ? std::exp(lp[i]) : 0.0;
  ++steps_;
  return out;
}

double ClusterDecoder::peek_value(int selection) const {
  ad::Tape& t = *tape_;
  ad::Tape::LstmState next = t.lstm_cell(input_encoding(selection), state_, t.param(params_->store, "pdec.wx"),
                                         t.param(params_->store, "pdec.wh"), t.param(params_->store, "pdec.b"));
  ad::Var v = t.add(t.dot(next.h, t.param(params_->store, "value.w")), t.param(params_->store, "value.b"));
  return t.scalar_val(v);
}

}  // namespace pobrl
