#include "pobrl/cli.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pobrl/autodiff.hpp"
#include "pobrl/corpus.hpp"
#include "pobrl/extractor.hpp"
#include "pobrl/mmr.hpp"
#include "pobrl/pobrl.hpp"
#include "pobrl/rl.hpp"
#include "pobrl/rng.hpp"
#include "pobrl/rouge.hpp"

namespace pobrl::cli {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string trim(std::string_view s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "seed") cfg.seed = to_u64(key, value);
  else if (key == "workers") cfg.workers = to_int(key, value);
  else if (key == "corpus") cfg.corpus = value;
  else if (key == "summaries") cfg.summaries = value;
  else if (key == "out") cfg.out = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "vocab") cfg.vocab = value;
  else if (key == "importance") cfg.importance = value;
  else if (key == "redundancy") cfg.redundancy = value;
  else if (key == "lambda") cfg.lambda = value;
  else if (key == "decoding") cfg.decoding = value;
  else if (key == "mmr_baseline") cfg.mmr_baseline = to_bool(key, value);
  else if (key == "single_policy") cfg.single_policy = to_bool(key, value);
  else if (key == "mmr_lambda") cfg.mmr_lambda = to_double(key, value);
  else if (key == "mmr_max_len") cfg.mmr_max_len = to_int(key, value);
  else if (key == "embed_dim") cfg.embed_dim = to_int(key, value);
  else if (key == "conv_filters") cfg.conv_filters = to_int(key, value);
  else if (key == "article_hidden") cfg.article_hidden = to_int(key, value);
  else if (key == "article_layers") cfg.article_layers = to_int(key, value);
  else if (key == "pointer_hidden") cfg.pointer_hidden = to_int(key, value);
  else if (key == "attention_dim") cfg.attention_dim = to_int(key, value);
  else if (key == "min_token_freq") cfg.min_token_freq = to_int(key, value);
  else if (key == "warm_epochs") cfg.warm_epochs = to_int(key, value);
  else if (key == "warm_lr") cfg.warm_lr = to_double(key, value);
  else if (key == "warm_batch") cfg.warm_batch = to_int(key, value);
  else if (key == "rl_epochs") cfg.rl_epochs = to_int(key, value);
  else if (key == "rl_lr") cfg.rl_lr = to_double(key, value);
  else if (key == "rl_batch") cfg.rl_batch = to_int(key, value);
  else if (key == "gamma") cfg.gamma = to_double(key, value);
  else if (key == "entropy_bonus") cfg.entropy_bonus = to_double(key, value);
  else if (key == "grad_clip") cfg.grad_clip = to_double(key, value);
  else if (key == "max_steps") cfg.max_steps = to_int(key, value);
  else if (key == "rl_sample") cfg.rl_sample = to_bool(key, value);
  else if (key == "by_doc_count") cfg.by_doc_count = to_bool(key, value);
  else if (key == "trials") cfg.trials = to_int(key, value);
  else if (key == "max_states") cfg.max_states = to_int(key, value);
  else if (key == "max_actions") cfg.max_actions = to_int(key, value);
  else if (key == "mdp_gamma") cfg.mdp_gamma = to_double(key, value);
  else if (key == "tolerance") cfg.tolerance = to_double(key, value);
  else throw std::invalid_argument("unknown config key: " + key);
}

template <typename F>
void parallel_for(int n, int workers, F&& body) {
  workers = std::max(1, std::min(workers, n));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr first;
  auto drain = [&] {
    while (true) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(drain);
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

void write_provenance(std::ostream& os, const RunConfig& cfg, const std::string& checkpoint_hash) {
  ordered_json p;
  p["provenance"] = {{"seed", cfg.seed},
                     {"config_hash", hex64(fnv1a(cfg.canonical()))},
                     {"checkpoint_hash", checkpoint_hash}};
  os << p.dump() << "\n";
}

std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::invalid_argument("cannot open output file: " + path);
  return os;
}

void require_readable(const std::string& what, const std::string& path) {
  if (path.empty()) throw std::invalid_argument("missing required path: --" + what);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open " + what + " file: " + path);
}

std::vector<Token> split_tokens(const std::string& text) {
  std::vector<Token> out;
  std::istringstream is(text);
  Token t;
  while (is >> t) out.push_back(t);
  return out;
}

std::pair<LambdaMode, double> parse_lambda_spec(const std::string& spec) {
  if (spec == "adaptive") return {LambdaMode::Adaptive, 0.5};
  if (spec.rfind("fixed:", 0) == 0) {
    std::string v = spec.substr(6);
    double x = to_double("lambda", v);
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("--lambda fixed value must be in [0,1], got " + v);
    return {LambdaMode::Fixed, x};
  }
  throw std::invalid_argument("invalid --lambda '" + spec + "': expected fixed:<x> or adaptive");
}

ExtractorConfig extractor_config_from(const RunConfig& cfg) {
  ExtractorConfig ec;
  ec.embed_dim = cfg.embed_dim;
  ec.conv_filters = cfg.conv_filters;
  ec.article_hidden = cfg.article_hidden;
  ec.article_layers = cfg.article_layers;
  ec.pointer_hidden = cfg.pointer_hidden;
  ec.attention_dim = cfg.attention_dim;
  ec.min_token_freq = cfg.min_token_freq;
  return ec;
}

int cmd_oracle(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_readable("corpus", cfg.corpus);
  if (cfg.out.empty()) throw std::invalid_argument("missing required path: --out");
  std::vector<Cluster> corpus = load_corpus(cfg.corpus);

  std::ofstream os = open_output(cfg.out);
  write_provenance(os, cfg, "none");
  int written = 0;
  for (const Cluster& cluster : corpus) {
    if (cluster.gold_summary.empty()) {
      err << "warning: cluster '" << cluster.id << "' has no gold summary, skipped\n";
      continue;
    }
    OracleLabels labels = oracle_labels(cluster);
    ordered_json line;
    line["id"] = cluster.id;
    line["labels"] = labels.labels;
    os << line.dump() << "\n";
    ++written;
  }
  out << "wrote " << written << " label rows to " << cfg.out << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_readable("corpus", cfg.corpus);
  if (cfg.out_dir.empty()) throw std::invalid_argument("missing required path: --out-dir");
  std::vector<Cluster> corpus;
  for (Cluster& c : load_corpus(cfg.corpus)) {
    if (c.gold_summary.empty()) {
      err << "warning: cluster '" << c.id << "' has no gold summary, excluded from training\n";
      continue;
    }
    corpus.push_back(std::move(c));
  }
  if (corpus.empty()) throw std::invalid_argument("no trainable clusters: every cluster lacks a gold summary");

  std::filesystem::create_directories(cfg.out_dir);
  auto path_of = [&](const char* name) { return (std::filesystem::path(cfg.out_dir) / name).string(); };
  const std::string config_hash = hex64(fnv1a(cfg.canonical()));

  ExtractorConfig ec = extractor_config_from(cfg);
  Vocab vocab = Vocab::build(corpus, ec.min_token_freq);
  vocab.save(path_of("vocab.txt"));

  Rng rng(cfg.seed);
  ExtractorParams params = ExtractorParams::init(ec, vocab, rng.fork("init"));
  out << "initialized extractor with " << params.total_parameters() << " parameters, vocab size " << vocab.size()
      << "\n";

  WarmStartConfig wc;
  wc.epochs = cfg.warm_epochs;
  wc.lr = cfg.warm_lr;
  wc.batch = cfg.warm_batch;
  wc.grad_clip = cfg.grad_clip;
  std::vector<double> warm_curve = warm_start(params, corpus, wc, rng.fork("warm"));
  std::vector<std::pair<std::string, std::string>> meta = {
      {"seed", std::to_string(cfg.seed)}, {"config_hash", config_hash}, {"phase", "warm"}};
  params.save(path_of("warm.ckpt"), meta);
  out << "warm start: " << warm_curve.size() << " epochs, final mean nll "
      << (warm_curve.empty() ? 0.0 : warm_curve.back()) << "\n";

  RlConfig rl;
  rl.reward.gamma = cfg.gamma;
  rl.epochs = cfg.rl_epochs;
  rl.batch_size = cfg.rl_batch;
  rl.lr = cfg.rl_lr;
  rl.entropy_bonus = cfg.entropy_bonus;
  rl.grad_clip = cfg.grad_clip;
  rl.max_steps = cfg.max_steps;
  rl.sample = cfg.rl_sample;

  ExtractorParams importance = params;
  std::vector<EpochStats> imp_stats = train_policy(importance, corpus, PolicyObjective::Importance, rl, rng.fork("importance"));
  meta[2] = {"phase", "importance"};
  importance.save(path_of("importance.ckpt"), meta);
  out << "importance policy: " << imp_stats.size() << " epochs, final mean reward "
      << (imp_stats.empty() ? 0.0 : imp_stats.back().mean_reward) << "\n";

  ExtractorParams redundancy = params;
  std::vector<EpochStats> red_stats = train_policy(redundancy, corpus, PolicyObjective::Redundancy, rl, rng.fork("redundancy"));
  meta[2] = {"phase", "redundancy"};
  redundancy.save(path_of("redundancy.ckpt"), meta);
  out << "redundancy policy: " << red_stats.size() << " epochs, final mean reward "
      << (red_stats.empty() ? 0.0 : red_stats.back().mean_reward) << "\n";

  std::string ckpt_hash = hex64(hash_file(path_of("warm.ckpt"))) + ":" + hex64(hash_file(path_of("importance.ckpt"))) +
                          ":" + hex64(hash_file(path_of("redundancy.ckpt")));
  std::ofstream log = open_output(path_of("train_log.jsonl"));
  write_provenance(log, cfg, ckpt_hash);
  for (std::size_t i = 0; i < warm_curve.size(); ++i) {
    ordered_json line;
    line["phase"] = "warm";
    line["epoch"] = static_cast<int>(i);
    line["mean_loss"] = warm_curve[i];
    log << line.dump() << "\n";
  }
  auto log_stats = [&](const char* phase, const std::vector<EpochStats>& stats) {
    for (const EpochStats& s : stats) {
      ordered_json line;
      line["phase"] = phase;
      line["epoch"] = s.epoch;
      line["mean_reward"] = s.mean_reward;
      line["mean_loss"] = s.mean_loss;
      line["mean_summary_len"] = s.mean_summary_len;
      log << line.dump() << "\n";
    }
  };
  log_stats("importance", imp_stats);
  log_stats("redundancy", red_stats);
  out << "checkpoints and training log written to " << cfg.out_dir << "\n";
  return 0;
}

struct SummarizeRow {
  std::string id;
  std::vector<std::string> sentences;
  std::vector<StepTrace> trace;
};

int cmd_summarize(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  require_readable("corpus", cfg.corpus);
  if (cfg.out.empty()) throw std::invalid_argument("missing required path: --out");
  if (cfg.mmr_baseline && cfg.single_policy)
    throw std::invalid_argument("--mmr-baseline and --single-policy are mutually exclusive");
  if (cfg.decoding != "greedy" && cfg.decoding != "sample")
    throw std::invalid_argument("invalid --decoding '" + cfg.decoding + "': expected greedy or sample");

  std::vector<Cluster> corpus = load_corpus(cfg.corpus);
  std::vector<SummarizeRow> rows(corpus.size());
  std::string ckpt_hash = "none";

  if (cfg.mmr_baseline) {
    if (!(cfg.mmr_lambda >= 0.0 && cfg.mmr_lambda <= 1.0))
      throw std::invalid_argument("--mmr-lambda must be in [0,1]");
    parallel_for(static_cast<int>(corpus.size()), cfg.workers, [&](int i) {
      const Cluster& cluster = corpus[static_cast<std::size_t>(i)];
      MmrConfig mc;
      mc.lambda = cfg.mmr_lambda;
      mc.max_len = cfg.mmr_max_len;
      ScorerPair scorers{tfidf_importance(cluster), rougeL_redundancy()};
      std::vector<Sentence> picked = greedy_mmr(cluster, mc, scorers);
      SummarizeRow& row = rows[static_cast<std::size_t>(i)];
      row.id = cluster.id;
      for (std::size_t k = 0; k < picked.size(); ++k) {
        const Sentence& s = picked[k];
        row.sentences.push_back(detokenize(s.tokens));
        StepTrace t;
        t.step = static_cast<int>(k);
        t.lambda = cfg.mmr_lambda;
        t.index = cluster.global_index(s.article_index, s.sentence_index);
        row.trace.push_back(std::move(t));
      }
    });
  } else {
    require_readable("vocab", cfg.vocab);
    require_readable("importance", cfg.importance);
    Vocab vocab = Vocab::load(cfg.vocab);
    ExtractorParams imp = ExtractorParams::load(cfg.importance, vocab);

    auto [mode, fixed] = parse_lambda_spec(cfg.lambda);
    BlendConfig bc;
    bc.lambda_mode = mode;
    bc.fixed_lambda = fixed;
    bc.decoding = cfg.decoding == "greedy" ? Decoding::Greedy : Decoding::Sample;
    bc.max_steps = cfg.max_steps;
    bc.gamma = cfg.gamma;

    Rng base(cfg.seed);
    if (cfg.single_policy) {
      ckpt_hash = hex64(hash_file(cfg.importance));
      bc.lambda_mode = LambdaMode::Fixed;
      bc.fixed_lambda = 1.0;
      parallel_for(static_cast<int>(corpus.size()), cfg.workers, [&](int i) {
        const Cluster& cluster = corpus[static_cast<std::size_t>(i)];
        Rng rng = base.fork(cluster.id);
        PobrlSummary s = single_policy_summarize(cluster, imp, bc, rng);
        SummarizeRow& row = rows[static_cast<std::size_t>(i)];
        row.id = cluster.id;
        for (int g : s.indices) row.sentences.push_back(detokenize(cluster.sentence_at(g).tokens));
        row.trace = std::move(s.trace);
      });
    } else {
      require_readable("redundancy", cfg.redundancy);
      ExtractorParams red = ExtractorParams::load(cfg.redundancy, vocab);
      ckpt_hash = hex64(hash_file(cfg.importance)) + ":" + hex64(hash_file(cfg.redundancy));
      parallel_for(static_cast<int>(corpus.size()), cfg.workers, [&](int i) {
        const Cluster& cluster = corpus[static_cast<std::size_t>(i)];
        Rng rng = base.fork(cluster.id);
        PobrlSummary s = pobrl_summarize(cluster, imp, red, bc, rng);
        SummarizeRow& row = rows[static_cast<std::size_t>(i)];
        row.id = cluster.id;
        for (int g : s.indices) row.sentences.push_back(detokenize(cluster.sentence_at(g).tokens));
        row.trace = std::move(s.trace);
      });
    }
  }

  std::ofstream os = open_output(cfg.out);
  write_provenance(os, cfg, ckpt_hash);
  for (const SummarizeRow& row : rows) {
    ordered_json line;
    line["id"] = row.id;
    line["summary"] = row.sentences;
    ordered_json trace = ordered_json::array();
    for (const StepTrace& t : row.trace)
      trace.push_back(ordered_json{{"step", t.step}, {"lambda", t.lambda}, {"index", t.index}});
    line["trace"] = std::move(trace);
    os << line.dump() << "\n";
  }
  out << "wrote " << rows.size() << " summaries to " << cfg.out << "\n";
  return 0;
}

struct EvalRow {
  bool scored = false;
  int docs = 0;
  double r1 = 0.0, r2 = 0.0, rl = 0.0, su4 = 0.0;
};

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_readable("summaries", cfg.summaries);
  require_readable("corpus", cfg.corpus);
  std::vector<SummaryRecord> records = read_summaries(cfg.summaries);
  std::vector<Cluster> corpus = load_corpus(cfg.corpus);

  std::map<std::string, const Cluster*> by_id;
  for (const Cluster& c : corpus) by_id.emplace(c.id, &c);

  std::set<std::string> summary_ids;
  std::vector<std::string> unknown, missing;
  for (const SummaryRecord& r : records) {
    summary_ids.insert(r.id);
    if (!by_id.count(r.id)) unknown.push_back(r.id);
  }
  for (const Cluster& c : corpus)
    if (!c.gold_summary.empty() && !summary_ids.count(c.id)) missing.push_back(c.id);
  if (!unknown.empty() || !missing.empty()) {
    std::string msg = "id mismatch between summaries and corpus:";
    for (const std::string& id : unknown) msg += " '" + id + "' not in corpus;";
    for (const std::string& id : missing) msg += " '" + id + "' has no summary;";
    throw std::invalid_argument(msg);
  }

  std::vector<EvalRow> evals(records.size());
  parallel_for(static_cast<int>(records.size()), cfg.workers, [&](int i) {
    const SummaryRecord& r = records[static_cast<std::size_t>(i)];
    const Cluster& cluster = *by_id.at(r.id);
    if (cluster.gold_summary.empty()) return;
    std::vector<Token> system;
    for (const std::string& s : r.sentences) {
      std::vector<Token> toks = split_tokens(s);
      system.insert(system.end(), toks.begin(), toks.end());
    }
    std::vector<Token> gold;
    for (const Sentence& s : cluster.gold_summary) gold.insert(gold.end(), s.tokens.begin(), s.tokens.end());
    EvalRow& e = evals[static_cast<std::size_t>(i)];
    e.scored = true;
    e.docs = static_cast<int>(cluster.articles.size());
    e.r1 = rouge_n(system, gold, 1).f1;
    e.r2 = rouge_n(system, gold, 2).f1;
    e.rl = rouge_l(system, gold).f1;
    e.su4 = rouge_su4(system, gold).f1;
  });

  int scored = 0;
  double r1 = 0.0, r2 = 0.0, rl = 0.0, su4 = 0.0;
  std::map<int, std::pair<int, double>> by_docs;
  for (std::size_t i = 0; i < evals.size(); ++i) {
    if (!evals[i].scored) {
      err << "warning: cluster '" << records[i].id << "' has no gold summary, not scored\n";
      continue;
    }
    ++scored;
    r1 += evals[i].r1;
    r2 += evals[i].r2;
    rl += evals[i].rl;
    su4 += evals[i].su4;
    auto& slot = by_docs[evals[i].docs];
    slot.first += 1;
    slot.second += evals[i].r1;
  }
  if (scored == 0) throw std::invalid_argument("no scorable summaries: every matched cluster lacks a gold summary");
  r1 /= scored;
  r2 /= scored;
  rl /= scored;
  su4 /= scored;

  out << "clusters scored: " << scored << "\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "ROUGE-1   F1: %.6f\n", r1);
  out << buf;
  std::snprintf(buf, sizeof(buf), "ROUGE-2   F1: %.6f\n", r2);
  out << buf;
  std::snprintf(buf, sizeof(buf), "ROUGE-L   F1: %.6f\n", rl);
  out << buf;
  std::snprintf(buf, sizeof(buf), "ROUGE-SU4 F1: %.6f\n", su4);
  out << buf;
  if (cfg.by_doc_count) {
    out << "mean ROUGE-1 F1 by source-document count:\n";
    for (const auto& [docs, slot] : by_docs) {
      std::snprintf(buf, sizeof(buf), "  %d docs: n=%d, %.6f\n", docs, slot.first, slot.second / slot.first);
      out << buf;
    }
  }

  if (!cfg.out.empty()) {
    std::ofstream os = open_output(cfg.out);
    ordered_json report;
    report["provenance"] = {{"seed", cfg.seed},
                            {"config_hash", hex64(fnv1a(cfg.canonical()))},
                            {"checkpoint_hash", "none"}};
    report["clusters"] = scored;
    report["rouge_1"] = r1;
    report["rouge_2"] = r2;
    report["rouge_l"] = rl;
    report["rouge_su4"] = su4;
    if (cfg.by_doc_count) {
      ordered_json groups;
      for (const auto& [docs, slot] : by_docs)
        groups[std::to_string(docs)] = {{"n", slot.first}, {"rouge_1", slot.second / slot.first}};
      report["by_doc_count"] = std::move(groups);
    }
    os << report.dump() << "\n";
  }
  return 0;
}

int cmd_redundancy(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  require_readable("summaries", cfg.summaries);
  std::vector<SummaryRecord> records = read_summaries(cfg.summaries);
  if (records.empty()) throw std::invalid_argument("summaries file has no records: " + cfg.summaries);

  std::vector<double> scores(records.size(), 0.0);
  parallel_for(static_cast<int>(records.size()), cfg.workers, [&](int i) {
    const SummaryRecord& r = records[static_cast<std::size_t>(i)];
    std::vector<std::vector<Token>> sentences;
    for (const std::string& s : r.sentences) sentences.push_back(split_tokens(s));
    double total = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < sentences.size(); ++a)
      for (std::size_t b = a + 1; b < sentences.size(); ++b) {
        total += rouge_l(sentences[a], sentences[b]).f1;
        ++pairs;
      }
    scores[static_cast<std::size_t>(i)] = pairs ? total / pairs : 0.0;
  });

  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  out << "summaries: " << records.size() << "\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "mean pairwise sentence ROUGE-L F1: %.6f (x100: %.4f)\n", mean, 100.0 * mean);
  out << buf;

  if (!cfg.out.empty()) {
    std::ofstream os = open_output(cfg.out);
    ordered_json report;
    report["provenance"] = {{"seed", cfg.seed},
                            {"config_hash", hex64(fnv1a(cfg.canonical()))},
                            {"checkpoint_hash", "none"}};
    report["summaries"] = records.size();
    report["mean_pairwise_rouge_l_f1"] = mean;
    report["mean_pairwise_rouge_l_f1_x100"] = 100.0 * mean;
    os << report.dump() << "\n";
  }
  return 0;
}

struct GradCase {
  std::string name;
  std::function<double(Rng)> runner;
};

GradCase prim(std::string name, std::vector<std::pair<std::string, std::vector<int>>> shapes, ad::ScalarFn fn) {
  return {std::move(name), [shapes = std::move(shapes), fn = std::move(fn)](Rng rng) {
            ad::ParamStore store;
            for (const auto& [n, s] : shapes) store.add_uniform(n, s, rng.fork(n), 0.8);
            return ad::grad_check(store, fn, 1e-4, rng.fork("fd"), 64);
          }};
}

std::vector<GradCase> primitive_cases() {
  using ad::Tape;
  using ad::ParamStore;
  using ad::Var;
  std::vector<GradCase> cases;
  cases.push_back(prim("add", {{"a", {7}}, {"b", {7}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.add(t.param(s, "a"), t.param(s, "b"))));
  }));
  cases.push_back(prim("sub", {{"a", {7}}, {"b", {7}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.sub(t.param(s, "a"), t.param(s, "b"))));
  }));
  cases.push_back(prim("mul", {{"a", {7}}, {"b", {7}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.mul(t.param(s, "a"), t.param(s, "b"))));
  }));
  cases.push_back(prim("scale", {{"a", {7}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.scale(t.param(s, "a"), 1.7)));
  }));
  cases.push_back(prim("emax", {{"a", {7}}, {"b", {7}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.emax(t.param(s, "a"), t.param(s, "b"))));
  }));
  cases.push_back(prim("tanh", {{"a", {7}}}, [](Tape& t, ParamStore& s) {
    Var y = t.tanh(t.param(s, "a"));
    return t.dot(y, y);
  }));
  cases.push_back(prim("sigmoid", {{"a", {7}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.sigmoid(t.param(s, "a")));
  }));
  cases.push_back(prim("exp", {{"a", {7}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.exp(t.scale(t.param(s, "a"), 0.5)));
  }));
  cases.push_back(prim("sum", {{"a", {7}}}, [](Tape& t, ParamStore& s) {
    Var total = t.sum(t.param(s, "a"));
    return t.mul(total, total);
  }));
  cases.push_back(prim("dot", {{"a", {6}}, {"b", {6}}}, [](Tape& t, ParamStore& s) {
    return t.dot(t.tanh(t.param(s, "a")), t.sigmoid(t.param(s, "b")));
  }));
  cases.push_back(prim("matmul", {{"a", {3, 4}}, {"b", {4, 2}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.matmul(t.param(s, "a"), t.param(s, "b"))));
  }));
  cases.push_back(prim("matvec", {{"m", {3, 5}}, {"x", {5}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.matvec(t.param(s, "m"), t.param(s, "x"))));
  }));
  cases.push_back(prim("matvec_t", {{"m", {4, 3}}, {"x", {4}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.matvec_t(t.param(s, "m"), t.param(s, "x"))));
  }));
  cases.push_back(prim("add_rowwise", {{"m", {3, 4}}, {"r", {4}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.add_rowwise(t.param(s, "m"), t.param(s, "r"))));
  }));
  cases.push_back(prim("concat", {{"a", {3}}, {"b", {4}}}, [](Tape& t, ParamStore& s) {
    std::array<Var, 2> parts{t.param(s, "a"), t.param(s, "b")};
    return t.sum(t.tanh(t.concat(parts)));
  }));
  cases.push_back(prim("slice", {{"a", {6}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.slice(t.param(s, "a"), 1, 3)));
  }));
  cases.push_back(prim("pick", {{"a", {5}}}, [](Tape& t, ParamStore& s) {
    Var y = t.tanh(t.param(s, "a"));
    return t.mul(t.pick(y, 0), t.pick(y, 3));
  }));
  cases.push_back(prim("stack_rows", {{"a", {4}}, {"b", {4}}}, [](Tape& t, ParamStore& s) {
    std::array<Var, 2> parts{t.param(s, "a"), t.param(s, "b")};
    return t.sum(t.tanh(t.stack_rows(parts)));
  }));
  cases.push_back(prim("row", {{"m", {3, 4}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.row(t.param(s, "m"), 1)));
  }));
  cases.push_back(prim("rows", {{"m", {4, 3}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.rows(t.param(s, "m"), {0, 2, 0})));
  }));
  cases.push_back(prim("conv1d", {{"x", {6, 3}}, {"w", {4, 9}}, {"b", {4}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.conv1d(t.param(s, "x"), t.param(s, "w"), t.param(s, "b"), 3)));
  }));
  cases.push_back(prim("max_over_time", {{"x", {5, 4}}}, [](Tape& t, ParamStore& s) {
    return t.sum(t.tanh(t.max_over_time(t.param(s, "x"))));
  }));
  cases.push_back(prim("softmax", {{"x", {6}}, {"c", {6}}}, [](Tape& t, ParamStore& s) {
    return t.dot(t.softmax(t.param(s, "x")), t.tanh(t.param(s, "c")));
  }));
  cases.push_back(prim("log_softmax", {{"x", {6}}, {"c", {6}}}, [](Tape& t, ParamStore& s) {
    return t.dot(t.log_softmax(t.param(s, "x")), t.sigmoid(t.param(s, "c")));
  }));
  cases.push_back(prim("masked_log_softmax", {{"x", {6}}}, [](Tape& t, ParamStore& s) {
    std::vector<bool> allow = {true, false, true, true, false, true};
    Var lp = t.masked_log_softmax(t.param(s, "x"), allow);
    return t.add(t.pick(lp, 0), t.pick(lp, 3));
  }));
  cases.push_back(prim("entropy", {{"x", {6}}}, [](Tape& t, ParamStore& s) {
    std::vector<bool> allow = {true, false, true, true, false, true};
    return t.entropy_from_log_probs(t.masked_log_softmax(t.param(s, "x"), allow), allow);
  }));
  cases.push_back(prim("lstm_cell",
                       {{"x1", {3}}, {"x2", {3}}, {"wx", {16, 3}}, {"wh", {16, 4}}, {"b", {16}}},
                       [](Tape& t, ParamStore& s) {
                         Tape::LstmState st{t.input(ad::Tensor::zeros({4})), t.input(ad::Tensor::zeros({4}))};
                         st = t.lstm_cell(t.param(s, "x1"), st, t.param(s, "wx"), t.param(s, "wh"), t.param(s, "b"));
                         st = t.lstm_cell(t.param(s, "x2"), st, t.param(s, "wx"), t.param(s, "wh"), t.param(s, "b"));
                         return t.add(t.sum(t.tanh(st.h)), t.sum(t.tanh(st.c)));
                       }));
  cases.push_back(prim("bilstm",
                       {{"x1", {3}}, {"x2", {3}}, {"x3", {3}},
                        {"fwx", {8, 3}}, {"fwh", {8, 2}}, {"fb", {8}},
                        {"bwx", {8, 3}}, {"bwh", {8, 2}}, {"bb", {8}}},
                       [](Tape& t, ParamStore& s) {
                         Tape::BiLstmWeights w{t.param(s, "fwx"), t.param(s, "fwh"), t.param(s, "fb"),
                                               t.param(s, "bwx"), t.param(s, "bwh"), t.param(s, "bb")};
                         std::array<Var, 3> xs{t.param(s, "x1"), t.param(s, "x2"), t.param(s, "x3")};
                         std::vector<Var> states = t.bilstm_sequence(xs, w, 2);
                         Var loss = t.scalar(0.0);
                         for (Var st : states) loss = t.add(loss, t.sum(t.tanh(st)));
                         return loss;
                       }));
  return cases;
}

Cluster gradcheck_cluster() {
  std::string line = R"({"id":"gc","articles":[["alpha beta gamma. delta beta zeta epsilon."],["alpha delta kappa. beta gamma epsilon."]],"gold":["alpha beta gamma. delta epsilon."]})";
  return cluster_from_json_line(line, 1);
}

double extractor_gradcheck(Rng rng) {
  Cluster cluster = gradcheck_cluster();
  ExtractorConfig ec;
  ec.embed_dim = 12;
  ec.conv_filters = 5;
  ec.article_hidden = 8;
  ec.article_layers = 2;
  ec.pointer_hidden = 10;
  ec.attention_dim = 10;
  ec.min_token_freq = 1;
  Vocab vocab = Vocab::build({cluster}, ec.min_token_freq);
  ExtractorParams params = ExtractorParams::init(ec, vocab, rng.fork("init"));

  OracleLabels labels = oracle_labels(cluster);
  std::vector<int> actions = labels.labels;
  actions.push_back(cluster.total_sentences());

  ad::ScalarFn nll_fn = [&](ad::Tape& t, ad::ParamStore&) {
    ClusterDecoder decoder(t, params, cluster);
    PoolState state(cluster);
    ad::Var nll = t.scalar(0.0);
    int prev = -1;
    for (int action : actions) {
      auto out = decoder.step(state, prev, false);
      nll = t.add(nll, t.scale(t.pick(out.log_probs, action), -1.0));
      if (action < cluster.total_sentences()) prev = action;
    }
    return nll;
  };
  return ad::grad_check(params.store, nll_fn, 1e-4, rng.fork("fd"), 6);
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const double primitive_tol = 1e-4;
  const double extractor_tol = 1e-3;
  Rng rng(cfg.seed);
  auto start = std::chrono::steady_clock::now();

  bool all_pass = true;
  for (const GradCase& c : primitive_cases()) {
    double max_err = c.runner(rng.fork(c.name));
    bool pass = max_err < primitive_tol;
    all_pass = all_pass && pass;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "primitive %-18s max rel err %.3e  (tolerance %.0e)  %s\n", c.name.c_str(),
                  max_err, primitive_tol, pass ? "ok" : "FAIL");
    out << buf;
  }
  double ext_err = extractor_gradcheck(rng.fork("extractor"));
  bool ext_pass = ext_err < extractor_tol;
  all_pass = all_pass && ext_pass;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "extractor nll          max rel err %.3e  (tolerance %.0e)  %s\n", ext_err,
                extractor_tol, ext_pass ? "ok" : "FAIL");
  out << buf;

  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::snprintf(buf, sizeof(buf), "gradcheck: %s (%.1fs)\n", all_pass ? "PASS" : "FAIL", elapsed);
  out << buf;
  return all_pass ? 0 : 2;
}

int cmd_mdpcheck(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  if (cfg.trials < 1) throw std::invalid_argument("--trials must be >= 1");
  if (cfg.max_states < 2 || cfg.max_actions < 2)
    throw std::invalid_argument("--max-states and --max-actions must be >= 2");
  if (!(cfg.mdp_gamma > 0.0 && cfg.mdp_gamma < 1.0)) throw std::invalid_argument("--mdp-gamma must be in (0,1)");

  Rng rng(cfg.seed);
  Rng sizes = rng.fork("sizes");

  Rng same_rng = rng.fork("identical");
  TabularMdp same_mdp = TabularMdp::random(4, 3, cfg.mdp_gamma, same_rng);
  TabularPolicy same_pi = random_policy(same_mdp, same_rng);
  double identical_gap = performance_difference_check(same_mdp, same_pi, same_pi).gap;

  double worst = identical_gap;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    int n_states = 2 + sizes.uniform_int(cfg.max_states - 1);
    int n_actions = 2 + sizes.uniform_int(cfg.max_actions - 1);
    Rng trial_rng = rng.fork(static_cast<std::uint64_t>(trial));
    TabularMdp mdp = TabularMdp::random(n_states, n_actions, cfg.mdp_gamma, trial_rng);
    TabularPolicy pi_mix = random_policy(mdp, trial_rng);
    TabularPolicy pi_imp = random_policy(mdp, trial_rng);
    PerfDiffResult res = performance_difference_check(mdp, pi_mix, pi_imp);
    worst = std::max(worst, res.gap);
  }

  bool pass = worst < cfg.tolerance;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "identical-policy gap: %.3e\n", identical_gap);
  out << buf;
  std::snprintf(buf, sizeof(buf), "max |lhs - rhs| over %d random MDPs (<=%d states, gamma %.2f): %.3e\n", cfg.trials,
                cfg.max_states, cfg.mdp_gamma, worst);
  out << buf;
  std::snprintf(buf, sizeof(buf), "mdpcheck: %s (tolerance %.0e)\n", pass ? "PASS" : "FAIL", cfg.tolerance);
  out << buf;
  return pass ? 0 : 2;
}

int cmd_decouple(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  if (cfg.trials < 1) throw std::invalid_argument("--trials must be >= 1");
  const std::vector<Token> alphabet = {"the", "cat", "dog", "runs", "fast", "blue", "sky", "sun"};
  Rng rng(cfg.seed);

  auto random_tokens = [&](Rng& r, int len) {
    std::vector<Token> toks;
    for (int i = 0; i < len; ++i) toks.push_back(alphabet[static_cast<std::size_t>(r.uniform_int(static_cast<int>(alphabet.size())))]);
    return toks;
  };
  auto random_summary = [&](Rng& r, int n_sentences) {
    std::vector<Sentence> summary;
    for (int i = 0; i < n_sentences; ++i) {
      Sentence s;
      s.tokens = random_tokens(r, 3 + r.uniform_int(5));
      s.article_index = 0;
      s.sentence_index = i;
      summary.push_back(std::move(s));
    }
    return summary;
  };

  double worst_small = 0.0;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    Rng r = rng.fork(static_cast<std::uint64_t>(trial));
    int n = trial % 3 == 0 ? 1 : 2;
    int ngram = trial % 2 == 0 ? 1 : 2;
    std::vector<Token> gold = random_tokens(r, 6 + r.uniform_int(6));
    DecouplingResult res = decoupling_check(random_summary(r, n), gold, ngram);
    worst_small = std::max(worst_small, std::abs(res.gap));
  }

  double worst_three = 0.0;
  bool finite = true;
  int three_trials = std::max(1, cfg.trials / 10);
  for (int trial = 0; trial < three_trials; ++trial) {
    Rng r = rng.fork("three").fork(static_cast<std::uint64_t>(trial));
    std::vector<Token> gold = random_tokens(r, 6 + r.uniform_int(6));
    DecouplingResult res = decoupling_check(random_summary(r, 3), gold, 1);
    finite = finite && std::isfinite(res.gap);
    worst_three = std::max(worst_three, std::abs(res.gap));
  }

  bool pass = worst_small == 0.0 && finite;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "<=2-sentence cases: %d, max |gap| = %.17g (must be exactly 0)\n", cfg.trials,
                worst_small);
  out << buf;
  std::snprintf(buf, sizeof(buf), "3-sentence cases: %d, all gaps finite: %s, max |gap| = %.6f\n", three_trials,
                finite ? "yes" : "NO", worst_three);
  out << buf;
  std::snprintf(buf, sizeof(buf), "decouple: %s\n", pass ? "PASS" : "FAIL");
  out << buf;
  return pass ? 0 : 2;
}

int workers_env_override(int current) {
  const char* env = std::getenv("POBRL_WORKERS");
  if (!env || !*env) return current;
  std::string v(env);
  try {
    std::size_t pos = 0;
    int w = std::stoi(v, &pos);
    if (pos != v.size() || w < 1) throw std::invalid_argument("");
    return w;
  } catch (...) {
    throw std::invalid_argument("POBRL_WORKERS must be a positive integer, got '" + v + "'");
  }
}

}  // namespace

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os << "seed=" << seed << "\nworkers=" << workers << "\ncorpus=" << corpus << "\nsummaries=" << summaries
     << "\nvocab=" << vocab << "\nimportance=" << importance
     << "\nredundancy=" << redundancy << "\nlambda=" << lambda << "\ndecoding=" << decoding
     << "\nmmr_baseline=" << mmr_baseline << "\nsingle_policy=" << single_policy
     << "\nmmr_lambda=" << fmt_double(mmr_lambda) << "\nmmr_max_len=" << mmr_max_len << "\nembed_dim=" << embed_dim
     << "\nconv_filters=" << conv_filters << "\narticle_hidden=" << article_hidden
     << "\narticle_layers=" << article_layers << "\npointer_hidden=" << pointer_hidden
     << "\nattention_dim=" << attention_dim << "\nmin_token_freq=" << min_token_freq
     << "\nwarm_epochs=" << warm_epochs << "\nwarm_lr=" << fmt_double(warm_lr) << "\nwarm_batch=" << warm_batch
     << "\nrl_epochs=" << rl_epochs << "\nrl_lr=" << fmt_double(rl_lr) << "\nrl_batch=" << rl_batch
     << "\ngamma=" << fmt_double(gamma) << "\nentropy_bonus=" << fmt_double(entropy_bonus)
     << "\ngrad_clip=" << fmt_double(grad_clip) << "\nmax_steps=" << max_steps << "\nrl_sample=" << rl_sample
     << "\nby_doc_count=" << by_doc_count << "\ntrials=" << trials << "\nmax_states=" << max_states
     << "\nmax_actions=" << max_actions << "\nmdp_gamma=" << fmt_double(mdp_gamma)
     << "\ntolerance=" << fmt_double(tolerance) << "\n";
  return os.str();
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open file for hashing: " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return fnv1a(buffer.str());
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string entry = trim(line);
    if (entry.empty()) continue;
    std::size_t eq = entry.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("malformed config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(entry.substr(0, eq));
    std::string value = trim(entry.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("malformed config line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

std::vector<SummaryRecord> read_summaries(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open summaries file: " + path);
  std::vector<SummaryRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::invalid_argument("malformed summaries line " + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("provenance")) continue;
    if (!j.contains("id") || !j["id"].is_string())
      throw std::invalid_argument("missing field: id @ summaries line " + std::to_string(line_no));
    if (!j.contains("summary") || !j["summary"].is_array())
      throw std::invalid_argument("missing field: summary @ summaries line " + std::to_string(line_no));
    SummaryRecord rec;
    rec.id = j["id"].get<std::string>();
    for (const auto& s : j["summary"]) {
      if (!s.is_string())
        throw std::invalid_argument("summary entries must be strings @ summaries line " + std::to_string(line_no));
      rec.sentences.push_back(s.get<std::string>());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    for (int i = 1; i < argc; ++i) {
      std::string_view arg = argv[i];
      std::string config_path;
      if (arg == "--config" && i + 1 < argc) config_path = argv[i + 1];
      else if (arg.rfind("--config=", 0) == 0) config_path = std::string(arg.substr(9));
      if (!config_path.empty())
        for (const auto& [key, value] : parse_config_file(config_path)) apply_config_entry(cfg, key, value);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  CLI::App app{"PoBRL: policy-blended extractive multi-document summarization"};
  app.require_subcommand(1);
  std::string config_path_opt;
  app.add_option("--config", config_path_opt, "key=value configuration file (flags override)");

  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", config_path_opt, "key=value configuration file (flags override)");
    sc->add_option("--seed", cfg.seed, "root random seed");
    sc->add_option("--workers", cfg.workers, "worker threads for per-cluster work (POBRL_WORKERS overrides)");
  };

  CLI::App* oracle = app.add_subcommand("oracle", "emit extractive oracle labels per cluster");
  add_common(oracle);
  oracle->add_option("--corpus", cfg.corpus, "input corpus JSONL");
  oracle->add_option("--out", cfg.out, "output labels JSONL");

  CLI::App* train = app.add_subcommand("train", "warm start, then train the importance and redundancy policies");
  add_common(train);
  train->add_option("--corpus", cfg.corpus, "training corpus JSONL");
  train->add_option("--out-dir", cfg.out_dir, "directory for checkpoints, vocab, and the training log");
  train->add_option("--embed-dim", cfg.embed_dim, "token embedding width");
  train->add_option("--conv-filters", cfg.conv_filters, "CNN filters per window size");
  train->add_option("--article-hidden", cfg.article_hidden, "article-level biLSTM width per direction");
  train->add_option("--article-layers", cfg.article_layers, "article-level biLSTM layers");
  train->add_option("--pointer-hidden", cfg.pointer_hidden, "pointer LSTM width");
  train->add_option("--attention-dim", cfg.attention_dim, "pointer score space width");
  train->add_option("--min-token-freq", cfg.min_token_freq, "vocabulary frequency cutoff");
  train->add_option("--warm-epochs", cfg.warm_epochs, "warm-start epochs");
  train->add_option("--warm-lr", cfg.warm_lr, "warm-start learning rate");
  train->add_option("--warm-batch", cfg.warm_batch, "warm-start batch size");
  train->add_option("--rl-epochs", cfg.rl_epochs, "policy-gradient epochs per policy");
  train->add_option("--rl-lr", cfg.rl_lr, "policy-gradient learning rate");
  train->add_option("--rl-batch", cfg.rl_batch, "trajectories per update");
  train->add_option("--gamma", cfg.gamma, "reward discount");
  train->add_option("--entropy-bonus", cfg.entropy_bonus, "entropy regularizer weight");
  train->add_option("--grad-clip", cfg.grad_clip, "global gradient norm clip");
  train->add_option("--max-steps", cfg.max_steps, "extraction cap per episode");
  bool greedy_rollouts = false;
  train->add_flag("--greedy-rollouts", greedy_rollouts, "decode rollouts greedily instead of sampling");

  CLI::App* summarize = app.add_subcommand("summarize", "run blended extraction over a corpus");
  add_common(summarize);
  summarize->add_option("--corpus", cfg.corpus, "input corpus JSONL");
  summarize->add_option("--out", cfg.out, "output summaries JSONL");
  summarize->add_option("--vocab", cfg.vocab, "vocabulary file from training");
  summarize->add_option("--importance", cfg.importance, "importance policy checkpoint");
  summarize->add_option("--redundancy", cfg.redundancy, "redundancy policy checkpoint");
  summarize->add_option("--lambda", cfg.lambda, "fixed:<x> or adaptive");
  summarize->add_option("--decoding", cfg.decoding, "greedy or sample");
  summarize->add_option("--max-steps", cfg.max_steps, "extraction cap per summary");
  summarize->add_option("--gamma", cfg.gamma, "discount for the adaptive lookahead");
  summarize->add_flag("--mmr-baseline", cfg.mmr_baseline, "run greedy tf-idf MMR instead of the policies");
  summarize->add_flag("--single-policy", cfg.single_policy, "decode the importance policy alone (lambda = 1)");
  summarize->add_option("--mmr-lambda", cfg.mmr_lambda, "MMR trade-off weight");
  summarize->add_option("--mmr-max-len", cfg.mmr_max_len, "MMR token budget");

  CLI::App* eval = app.add_subcommand("eval", "score summaries against gold with ROUGE-1/2/L/SU4");
  add_common(eval);
  eval->add_option("--summaries", cfg.summaries, "summaries JSONL from `summarize`");
  eval->add_option("--corpus", cfg.corpus, "corpus JSONL with gold summaries");
  eval->add_option("--out", cfg.out, "optional JSON report path");
  eval->add_flag("--by-doc-count", cfg.by_doc_count, "also report mean ROUGE-1 per source-document count");

  CLI::App* redundancy = app.add_subcommand("redundancy", "mean pairwise sentence ROUGE-L of summaries");
  add_common(redundancy);
  redundancy->add_option("--summaries", cfg.summaries, "summaries JSONL");
  redundancy->add_option("--out", cfg.out, "optional JSON report path");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every autodiff primitive");
  add_common(gradcheck);

  CLI::App* mdpcheck = app.add_subcommand("mdpcheck", "performance-difference identity on random tabular MDPs");
  add_common(mdpcheck);
  mdpcheck->add_option("--trials", cfg.trials, "number of random MDPs");
  mdpcheck->add_option("--max-states", cfg.max_states, "state-count cap");
  mdpcheck->add_option("--max-actions", cfg.max_actions, "action-count cap");
  mdpcheck->add_option("--mdp-gamma", cfg.mdp_gamma, "MDP discount");
  mdpcheck->add_option("--tolerance", cfg.tolerance, "maximum allowed |lhs - rhs|");

  CLI::App* decouple = app.add_subcommand("decouple", "exactness audit of the reward decoupling identity");
  add_common(decouple);
  decouple->add_option("--trials", cfg.trials, "number of random small summaries");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    cfg.workers = workers_env_override(cfg.workers);
    if (cfg.workers < 1) throw std::invalid_argument("--workers must be >= 1");
    if (greedy_rollouts) cfg.rl_sample = false;
    if (oracle->parsed()) return cmd_oracle(cfg, out, err);
    if (train->parsed()) return cmd_train(cfg, out, err);
    if (summarize->parsed()) return cmd_summarize(cfg, out, err);
    if (eval->parsed()) return cmd_eval(cfg, out, err);
    if (redundancy->parsed()) return cmd_redundancy(cfg, out, err);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, out, err);
    if (mdpcheck->parsed()) return cmd_mdpcheck(cfg, out, err);
    if (decouple->parsed()) return cmd_decouple(cfg, out, err);
    err << "error: no command given\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace pobrl::cli
