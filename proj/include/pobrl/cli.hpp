#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pobrl::cli {

// Resolved parameters of one invocation. Config-file values are applied
// first, command-line flags override, and the canonical form of the final
// state is what gets hashed into output provenance.
struct RunConfig {
  std::uint64_t seed = 42;
  int workers = 1;

  std::string corpus;
  std::string summaries;
  std::string out;
  std::string out_dir;
  std::string vocab;
  std::string importance;
  std::string redundancy;

  std::string lambda = "fixed:0.5";  // "fixed:<x>" or "adaptive"
  std::string decoding = "greedy";
  bool mmr_baseline = false;
  bool single_policy = false;
  double mmr_lambda = 0.5;
  int mmr_max_len = 100;

  int embed_dim = 128;
  int conv_filters = 100;
  int article_hidden = 256;
  int article_layers = 2;
  int pointer_hidden = 256;
  int attention_dim = 256;
  int min_token_freq = 2;

  int warm_epochs = 10;
  double warm_lr = 1e-3;
  int warm_batch = 64;
  int rl_epochs = 5;
  double rl_lr = 1e-7;
  int rl_batch = 32;
  double gamma = 0.99;
  double entropy_bonus = 0.01;
  double grad_clip = 2.0;
  int max_steps = 12;
  bool rl_sample = true;

  bool by_doc_count = false;

  int trials = 100;
  int max_states = 8;
  int max_actions = 4;
  double mdp_gamma = 0.9;
  double tolerance = 1e-6;

  std::string canonical() const;
};

std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t value);
std::uint64_t hash_file(const std::string& path);

std::map<std::string, std::string> parse_config_file(const std::string& path);

struct SummaryRecord {
  std::string id;
  std::vector<std::string> sentences;
};

// Reads a summaries JSONL artifact, skipping the provenance header line.
std::vector<SummaryRecord> read_summaries(const std::string& path);

// Dispatches one command line. Returns the process exit code: 0 success,
// 1 validation error, 2 check failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace pobrl::cli
