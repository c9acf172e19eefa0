#include "msr/config.hpp"

#include <yaml-cpp/yaml.h>

namespace msr::pipeline {

namespace fs = std::filesystem;

namespace {

template <class T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (!node || !node[key] || node[key].IsNull()) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

BackendDecl parse_backend(const std::string& name, const YAML::Node& n) {
  BackendDecl b;
  b.name = name;
  read(n, "base_url", b.base_url);
  read(n, "model", b.model);
  read(n, "api_key_env", b.api_key_env);
  read(n, "max_in_flight", b.max_in_flight);
  read(n, "timeout_s", b.timeout_s);
  read(n, "supports_logprobs", b.capabilities.logprobs);
  read(n, "supports_teacher_forcing", b.capabilities.teacher_forcing);
  read(n, "supports_images", b.capabilities.images);
  if (auto r = n["retry"]) {
    int base_ms = static_cast<int>(b.retry.base_delay.count());
    int max_ms = static_cast<int>(b.retry.max_delay.count());
    read(r, "attempts", b.retry.attempts);
    read(r, "base_delay_ms", base_ms);
    read(r, "max_delay_ms", max_ms);
    b.retry.base_delay = std::chrono::milliseconds(base_ms);
    b.retry.max_delay = std::chrono::milliseconds(max_ms);
  }
  return b;
}

}  // namespace

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(read_file(path), fs::absolute(path).parent_path());
}

RunConfig RunConfig::parse(const std::string& text, const fs::path& base) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig c;
  if (!root || root.IsNull()) return c;

  if (auto d = root["data"]) {
    std::string interactions, items;
    read(d, "interactions", interactions);
    read(d, "items", items);
    c.interactions = resolve(base, interactions);
    c.items = resolve(base, items);
    read(d, "min_user_interactions", c.thresholds.min_user_interactions);
    read(d, "min_item_interactions", c.thresholds.min_item_interactions);
    read(d, "min_seq_len", c.min_seq_len);
  }

  std::string workdir = c.workdir.string(), cache_dir, templates_dir;
  read(root, "workdir", workdir);
  read(root, "cache_dir", cache_dir);
  read(root, "templates_dir", templates_dir);
  read(root, "use_cache", c.use_cache);
  c.workdir = resolve(base, workdir);
  c.cache_dir = resolve(base, cache_dir);
  if (!templates_dir.empty()) c.templates_dir = resolve(base, templates_dir);

  if (auto s = root["items"]) {
    std::string mode = items::to_string(c.summarize_mode), policy = "fallback";
    read(s, "mode", mode);
    read(s, "target_words", c.item_target_words);
    read(s, "length_tolerance", c.length_tolerance);
    read(s, "fuse_cap_tokens", c.fuse_cap_tokens);
    read(s, "single_call", c.single_call);
    read(s, "missing_image", policy);
    c.summarize_mode = items::summary_mode_from_string(mode);
    if (policy == "fallback")
      c.missing_image = items::MissingImagePolicy::kFallback;
    else if (policy == "error")
      c.missing_image = items::MissingImagePolicy::kError;
    else
      throw ConfigError("items.missing_image must be fallback|error");
  }

  if (auto p = root["preferences"]) {
    std::string mode = preference::to_string(c.preference_mode);
    read(p, "mode", mode);
    read(p, "block_size", c.block_size);
    read(p, "summary_length", c.summary_length);
    c.preference_mode = preference::preference_mode_from_string(mode);
  }

  if (auto b = root["budget"]) {
    read(b, "max_prompt_tokens", c.max_prompt_tokens);
    read(b, "chars_per_token", c.chars_per_token);
    read(b, "temperature", c.temperature);
  }

  if (auto e = root["evaluation"]) {
    std::string policy = recommender::to_string(c.extraction_policy), span = "completion";
    read(e, "train_ratio", c.train_ratio);
    read(e, "eval_ratio", c.eval_ratio);
    read(e, "k", c.k);
    read(e, "n_folds", c.n_folds);
    read(e, "seeds", c.seeds);
    read(e, "top_logprobs", c.top_logprobs);
    read(e, "extraction_policy", policy);
    read(e, "attach_images", c.attach_images);
    read(e, "loss_span", span);
    c.extraction_policy = recommender::extraction_policy_from_string(policy);
    if (span == "completion")
      c.loss_span = gateway::LossSpan::kCompletion;
    else if (span == "full")
      c.loss_span = gateway::LossSpan::kFull;
    else
      throw ConfigError("evaluation.loss_span must be completion|full");
  }

  if (auto bs = root["backends"]) {
    for (auto it = bs.begin(); it != bs.end(); ++it) {
      auto name = it->first.as<std::string>();
      c.backends[name] = parse_backend(name, it->second);
    }
  }
  if (auto rs = root["roles"]) {
    for (auto it = rs.begin(); it != rs.end(); ++it)
      c.roles[gateway::role_from_string(it->first.as<std::string>())] = it->second.as<std::string>();
  }

  if (auto m = root["mock"]) {
    read(m, "enabled", c.mock.enabled);
    read(m, "seed", c.mock.seed);
    read(m, "scoring", c.mock.scoring);
    read(m, "oracle_p", c.mock.oracle_p);
    read(m, "uniform_cost", c.mock.uniform_cost);
    read(m, "max_in_flight", c.mock.max_in_flight);
    read(m, "latency_ms", c.mock.latency_ms);
  }
  return c;
}

void RunConfig::validate() const {
  if (interactions.empty() || items.empty())
    throw ConfigError("data.interactions and data.items are required");
  if (!fs::exists(interactions)) throw ConfigError("interactions file not found: " + interactions.string());
  if (!fs::exists(items)) throw ConfigError("items file not found: " + items.string());
  if (templates_dir && !fs::is_directory(*templates_dir))
    throw ConfigError("templates_dir not found: " + templates_dir->string());
  if (block_size < 1) throw ConfigError("block_size must be >= 1");
  if (summary_length < 1) throw ConfigError("summary_length must be >= 1");
  if (n_folds < 2) throw ConfigError("n_folds must be >= 2");
  if (eval_ratio < 1 || train_ratio < 1) throw ConfigError("sampling ratios must be >= 1");
  if (k < 1 || k > eval_ratio + 1) throw ConfigError("k must be in [1, eval_ratio + 1]");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (chars_per_token <= 0) throw ConfigError("chars_per_token must be positive");
  if (top_logprobs < 1) throw ConfigError("top_logprobs must be >= 1");
  if (temperature < 0) throw ConfigError("temperature must be >= 0");
  if (length_tolerance < 0) throw ConfigError("length_tolerance must be >= 0");
  if (mock.scoring != "hash_text" && mock.scoring != "oracle_yes" && mock.scoring != "uniform_logprob")
    throw ConfigError("mock.scoring must be hash_text|oracle_yes|uniform_logprob");
  if (mock.oracle_p < 0 || mock.oracle_p > 1) throw ConfigError("mock.oracle_p must be in [0,1]");
  if (!mock.enabled) {
    for (gateway::Role r : gateway::kAllRoles) {
      auto it = roles.find(r);
      if (it == roles.end())
        throw ConfigError("no backend bound to role " + gateway::to_string(r) + " (or enable mock)");
      if (!backends.contains(it->second))
        throw ConfigError("role " + gateway::to_string(r) + " names undeclared backend '" + it->second + "'");
    }
    for (const auto& [name, b] : backends) {
      if (b.base_url.empty() || b.model.empty())
        throw ConfigError("backend '" + name + "' needs base_url and model");
      if (b.max_in_flight < 1) throw ConfigError("backend '" + name + "': max_in_flight must be >= 1");
    }
  }
}

fs::path RunConfig::effective_cache_dir() const {
  return cache_dir.empty() ? workdir / "cache" : cache_dir;
}

std::string default_config_yaml() {
  return R"(# Pipeline configuration. Relative paths resolve against this file.

data:
  interactions: data/interactions.jsonl   # {user_id, item_id, timestamp} per line
  items: data/items.jsonl                 # {item_id, description, image_ref} per line
  min_user_interactions: 5                # iterative frequency filter
  min_item_interactions: 5
  min_seq_len: 5                          # shorter user sequences are dropped

workdir: runs/default
cache_dir: ""                             # empty: <workdir>/cache
use_cache: true
templates_dir: ""                         # optional directory of *.txt template overrides

items:
  mode: full                              # full | text_only (text_only drops image summaries)
  target_words: 80                        # shared length target for text and image outputs
  length_tolerance: 0.5                   # max relative length gap before one re-prompt
  fuse_cap_tokens: 160
  single_call: false                      # one combined call instead of text/image/fusion
  missing_image: fallback                 # fallback (text_only + warning) | error

preferences:
  mode: recurrent                         # recurrent | direct
  block_size: 3                           # items per block
  summary_length: 200                     # words per preference summary

budget:
  max_prompt_tokens: 512                  # cap on every prompt, in estimated tokens
  chars_per_token: 4                      # token estimate heuristic
  temperature: 0

evaluation:
  train_ratio: 1                          # negatives per positive in the SFT export (1:1)
  eval_ratio: 20                          # negatives per positive at evaluation (1:20)
  k: 5                                    # HR@K and MRR@K
  n_folds: 5
  seeds: [42]
  top_logprobs: 20
  extraction_policy: neutral              # neutral | error
  attach_images: true
  loss_span: completion                   # completion | full

backends:
  llava:
    base_url: http://localhost:8000/v1
    model: llava-hf/llava-v1.6-mistral-7b-hf
    api_key_env: MSR_API_KEY
    max_in_flight: 4
    timeout_s: 120
    supports_logprobs: true
    supports_teacher_forcing: true
    supports_images: true
    retry: {attempts: 3, base_delay_ms: 250, max_delay_ms: 8000}
  llama3:
    base_url: http://localhost:8001/v1
    model: meta-llama/Meta-Llama-3-8B-Instruct
    api_key_env: MSR_API_KEY
    max_in_flight: 4
    supports_images: false

roles:
  item_mllm: llava
  preference_llm: llama3
  recommender_mllm: llava

mock:
  enabled: false                          # --mock forces this on
  seed: 7
  scoring: hash_text                      # hash_text | oracle_yes | uniform_logprob
  oracle_p: 1.0
  uniform_cost: 0.6931471805599453
  max_in_flight: 8
  latency_ms: 0
)";
}

}  // namespace msr::pipeline
