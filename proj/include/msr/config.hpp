#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msr/catalog.hpp"
#include "msr/gateway.hpp"
#include "msr/item_summarizer.hpp"
#include "msr/preference.hpp"
#include "msr/recommender.hpp"

namespace msr::pipeline {

struct BackendDecl {
  std::string name;
  std::string base_url;
  std::string model;
  std::string api_key_env;
  std::size_t max_in_flight = 4;
  gateway::RetryPolicy retry;
  int timeout_s = 120;
  gateway::Capabilities capabilities;
};

struct MockDecl {
  bool enabled = false;
  std::uint64_t seed = 7;
  std::string scoring = "hash_text";  // hash_text | oracle_yes | uniform_logprob
  double oracle_p = 1.0;
  double uniform_cost = 0.6931471805599453;
  std::size_t max_in_flight = 8;
  int latency_ms = 0;
};

struct RunConfig {
  // data
  std::filesystem::path interactions;
  std::filesystem::path items;
  catalog::FilterThresholds thresholds;
  std::size_t min_seq_len = 5;

  // storage
  std::filesystem::path workdir = "runs/default";
  std::filesystem::path cache_dir;  // empty: <workdir>/cache
  bool use_cache = true;
  std::optional<std::filesystem::path> templates_dir;

  // item summarization
  items::SummaryMode summarize_mode = items::SummaryMode::kFull;
  std::size_t item_target_words = 80;
  double length_tolerance = 0.5;
  std::size_t fuse_cap_tokens = 160;
  bool single_call = false;
  items::MissingImagePolicy missing_image = items::MissingImagePolicy::kFallback;

  // preference inference
  preference::PreferenceMode preference_mode = preference::PreferenceMode::kRecurrent;
  std::size_t block_size = 3;
  std::size_t summary_length = 200;

  // shared budgets
  std::size_t max_prompt_tokens = 512;
  double chars_per_token = 4.0;
  double temperature = 0.0;

  // recommendation and evaluation
  std::size_t train_ratio = 1;
  std::size_t eval_ratio = 20;
  std::size_t k = 5;
  int n_folds = 5;
  std::vector<std::uint64_t> seeds{42};
  int top_logprobs = 20;
  recommender::ExtractionPolicy extraction_policy = recommender::ExtractionPolicy::kNeutral;
  bool attach_images = true;
  gateway::LossSpan loss_span = gateway::LossSpan::kCompletion;

  // backends: declarations by name, plus role -> name bindings
  std::map<std::string, BackendDecl> backends;
  std::map<gateway::Role, std::string> roles;
  MockDecl mock;

  /// Parses a YAML file; relative paths resolve against its directory.
  /// Absent keys keep the defaults above.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& yaml_text, const std::filesystem::path& base_dir);

  /// Throws ConfigError on inconsistent settings or missing files.
  void validate() const;
  std::filesystem::path effective_cache_dir() const;
};

/// Annotated YAML with every default filled in.
std::string default_config_yaml();

}  // namespace msr::pipeline
