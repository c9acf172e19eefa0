#include "msr/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <mutex>
#include <set>

#include "msr/catalog.hpp"
#include "msr/item_summarizer.hpp"
#include "msr/mock_backend.hpp"
#include "msr/openai_backend.hpp"
#include "msr/preference.hpp"
#include "msr/recommender.hpp"
#include "msr/sft.hpp"
#include "msr/templates.hpp"

namespace msr::pipeline {

namespace fs = std::filesystem;
using gateway::Role;

namespace {

constexpr Stage kOrder[] = {Stage::kIngest,   Stage::kSummarizeItems, Stage::kInferPreferences,
                            Stage::kBuildSft, Stage::kEvalLoss,       Stage::kScore,
                            Stage::kEvaluate};

bool seed_independent(Stage s) {
  return s == Stage::kSummarizeItems || s == Stage::kInferPreferences;
}

std::string hash_of(const json& j) { return sha256_hex(j.dump()); }

json stats_json(const gateway::GatewayStats& s) {
  json by_role = json::object();
  for (const auto& [role, r] : s.by_role)
    by_role[gateway::to_string(role)] = {{"backend_calls", r.backend_calls}, {"cache_hits", r.cache_hits}};
  return json{{"backend_calls", s.backend_calls()}, {"cache_hits", s.cache_hits()}, {"by_role", by_role}};
}

catalog::Catalog load_catalog(const fs::path& dir) {
  std::vector<catalog::Item> items;
  read_jsonl(dir / "items.jsonl", [&](std::size_t, const json& r) { items.push_back(catalog::item_from_json(r)); });
  std::vector<catalog::Interaction> xs;
  read_jsonl(dir / "interactions.jsonl", [&](std::size_t, const json& r) {
    xs.push_back({r.at("user_id").get<std::string>(), r.at("item_id").get<std::string>(),
                  r.at("timestamp").get<std::int64_t>()});
  });
  return catalog::Catalog::build(std::move(items), std::move(xs), {0, 0});
}

std::vector<catalog::UserSequence> load_sequences(const fs::path& dir) {
  std::vector<catalog::UserSequence> out;
  read_jsonl(dir / "sequences.jsonl", [&](std::size_t, const json& r) {
    out.push_back({r.at("user_id").get<std::string>(), r.at("items").get<std::vector<std::string>>()});
  });
  return out;
}

std::string fold_file(const std::string& prefix, int fold, const std::string& ext) {
  return prefix + std::to_string(fold) + ext;
}

}  // namespace

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kIngest: return "ingest";
    case Stage::kSummarizeItems: return "summarize-items";
    case Stage::kInferPreferences: return "infer-preferences";
    case Stage::kBuildSft: return "build-sft";
    case Stage::kEvalLoss: return "eval-loss";
    case Stage::kScore: return "score";
    case Stage::kEvaluate: return "evaluate";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : kOrder)
    if (to_string(s) == name) return s;
  throw ConfigError("unknown stage '" + name + "'");
}

std::vector<Stage> default_run_stages() {
  return {Stage::kIngest, Stage::kSummarizeItems, Stage::kInferPreferences,
          Stage::kBuildSft, Stage::kScore, Stage::kEvaluate};
}

std::size_t RunManifest::backend_calls() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.calls.backend_calls();
  return n;
}

std::size_t RunManifest::cache_hits() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.calls.cache_hits();
  return n;
}

const StageRecord* RunManifest::find(const std::string& stage, std::optional<std::uint64_t> seed) const {
  for (const auto& s : stages)
    if (s.stage == stage && (!seed || s.seed == seed)) return &s;
  return nullptr;
}

json RunManifest::to_json() const {
  json records = json::array();
  for (const auto& s : stages) {
    json r{{"stage", s.stage},
           {"fingerprint", s.fingerprint},
           {"reused", s.reused},
           {"calls", stats_json(s.calls)},
           {"wall_seconds", s.wall_seconds}};
    r["seed"] = s.seed ? json(*s.seed) : json(nullptr);
    records.push_back(std::move(r));
  }
  return json{{"config_fingerprint", config_fingerprint},
              {"backend_calls", backend_calls()},
              {"cache_hits", cache_hits()},
              {"stages", records}};
}

Pipeline::Pipeline(RunConfig config, std::shared_ptr<gateway::Gateway> gw)
    : config_(std::move(config)), gateway_(std::move(gw)) {
  config_.validate();
  if (!gateway_) {
    gateway::Gateway::Options opts;
    if (config_.use_cache) opts.cache_dir = config_.effective_cache_dir();
    opts.chars_per_token = config_.chars_per_token;
    gateway_ = std::make_shared<gateway::Gateway>(opts);
    owns_bindings_ = true;
  }
}

gateway::Gateway& Pipeline::gateway() { return *gateway_; }

void Pipeline::bind_backends(std::uint64_t seed) {
  if (!owns_bindings_) return;
  const auto& m = config_.mock;
  if (m.enabled) {
    if (!gateway_->bound(Role::kItemMllm)) {
      auto behavior = gateway::MockBehavior::hash_text();
      behavior.latency = std::chrono::milliseconds(m.latency_ms);
      auto text = std::make_shared<gateway::MockBackend>(m.seed, behavior);
      text->chars_per_token = config_.chars_per_token;
      gateway_->bind(Role::kItemMllm, text, m.max_in_flight);
      gateway_->bind(Role::kPreferenceLlm, text, m.max_in_flight);
    }
    if (!recommender_bound_ && complete(Stage::kIngest, seed)) {
      gateway::MockBehavior behavior;
      if (m.scoring == "oracle_yes") {
        // Targets are each user's last item, whatever the seed.
        std::set<std::string> positives;
        for (const auto& s : load_sequences(stage_dir(Stage::kIngest, seed)))
          positives.insert(gateway::probe_key(s.user_id, s.items.back()));
        behavior = gateway::MockBehavior::oracle_yes(m.oracle_p, std::move(positives));
      } else if (m.scoring == "uniform_logprob") {
        behavior = gateway::MockBehavior::uniform_logprob(m.uniform_cost);
      }
      behavior.latency = std::chrono::milliseconds(m.latency_ms);
      auto scorer = std::make_shared<gateway::MockBackend>(m.seed, behavior);
      scorer->chars_per_token = config_.chars_per_token;
      gateway_->bind(Role::kRecommenderMllm, scorer, m.max_in_flight);
      recommender_bound_ = true;
    }
    return;
  }
  if (gateway_->bound(Role::kItemMllm)) return;
  std::map<std::string, std::shared_ptr<gateway::Backend>> built;
  for (Role r : gateway::kAllRoles) {
    const BackendDecl& d = config_.backends.at(config_.roles.at(r));
    auto& b = built[d.name];
    if (!b)
      b = std::make_shared<gateway::OpenAiBackend>(gateway::HttpBackendConfig{
          d.name, d.base_url, d.model, d.api_key_env, d.capabilities, std::chrono::seconds(d.timeout_s)});
    gateway_->bind(r, b, d.max_in_flight, d.retry);
  }
  recommender_bound_ = true;
}

std::string Pipeline::data_fingerprint() const {
  if (data_fp_.empty()) {
    data_fp_ = hash_of({{"interactions", sha256_hex(read_file(config_.interactions))},
                        {"items", sha256_hex(read_file(config_.items))},
                        {"items_dir", fs::absolute(config_.items).parent_path().string()},
                        {"min_user", config_.thresholds.min_user_interactions},
                        {"min_item", config_.thresholds.min_item_interactions},
                        {"min_seq_len", config_.min_seq_len}});
  }
  return data_fp_;
}

std::string Pipeline::role_identity(Role role) const {
  const auto& m = config_.mock;
  if (m.enabled) {
    if (role == Role::kRecommenderMllm)
      return fmt::format("mock/{}/p{}/c{}/s{}", m.scoring, m.oracle_p, m.uniform_cost, m.seed);
    return fmt::format("mock/hash_text/s{}", m.seed);
  }
  const auto& d = config_.backends.at(config_.roles.at(role));
  return d.name + "|" + d.base_url + "|" + d.model;
}

std::string Pipeline::fingerprint(Stage stage, std::uint64_t seed) const {
  const auto& c = config_;
  const std::string templates = prompts::TemplateSet::load(c.templates_dir).fingerprint();
  json budget{{"max_prompt_tokens", c.max_prompt_tokens},
              {"chars_per_token", c.chars_per_token},
              {"temperature", c.temperature}};
  switch (stage) {
    case Stage::kIngest:
      return hash_of({{"stage", "ingest"},
                      {"data", data_fingerprint()},
                      {"n_folds", c.n_folds},
                      {"seed", seed},
                      {"eval_ratio", c.eval_ratio}});
    case Stage::kSummarizeItems:
      return hash_of({{"stage", "summarize-items"},
                      {"data", data_fingerprint()},
                      {"mode", items::to_string(c.summarize_mode)},
                      {"target_words", c.item_target_words},
                      {"tolerance", c.length_tolerance},
                      {"fuse_cap", c.fuse_cap_tokens},
                      {"single_call", c.single_call},
                      {"missing_image", c.missing_image == items::MissingImagePolicy::kError},
                      {"budget", budget},
                      {"templates", templates},
                      {"backend", role_identity(Role::kItemMllm)}});
    case Stage::kInferPreferences:
      return hash_of({{"stage", "infer-preferences"},
                      {"upstream", fingerprint(Stage::kSummarizeItems, seed)},
                      {"mode", preference::to_string(c.preference_mode)},
                      {"block_size", c.block_size},
                      {"summary_length", c.summary_length},
                      {"budget", budget},
                      {"templates", templates},
                      {"backend", role_identity(Role::kPreferenceLlm)}});
    case Stage::kBuildSft:
      return hash_of({{"stage", "build-sft"},
                      {"preferences", fingerprint(Stage::kInferPreferences, seed)},
                      {"ingest", fingerprint(Stage::kIngest, seed)},
                      {"train_ratio", c.train_ratio},
                      {"budget", budget},
                      {"templates", templates}});
    case Stage::kEvalLoss:
      return hash_of({{"stage", "eval-loss"},
                      {"upstream", fingerprint(Stage::kBuildSft, seed)},
                      {"loss_span", c.loss_span == gateway::LossSpan::kFull ? "full" : "completion"},
                      {"backend", role_identity(Role::kRecommenderMllm)}});
    case Stage::kScore:
      return hash_of({{"stage", "score"},
                      {"preferences", fingerprint(Stage::kInferPreferences, seed)},
                      {"ingest", fingerprint(Stage::kIngest, seed)},
                      {"top_logprobs", c.top_logprobs},
                      {"policy", recommender::to_string(c.extraction_policy)},
                      {"attach_images", c.attach_images},
                      {"budget", budget},
                      {"templates", templates},
                      {"backend", role_identity(Role::kRecommenderMllm)}});
    case Stage::kEvaluate:
      return hash_of({{"stage", "evaluate"}, {"score", fingerprint(Stage::kScore, seed)}, {"k", c.k}});
  }
  return {};
}

std::string Pipeline::config_fingerprint() const {
  json all = json::array();
  for (auto seed : config_.seeds)
    for (Stage s : kOrder) all.push_back(fingerprint(s, seed));
  return hash_of(all);
}

fs::path Pipeline::stage_dir(Stage stage, std::uint64_t seed) const {
  return config_.workdir / "stages" / (to_string(stage) + "-" + fingerprint(stage, seed).substr(0, 16));
}

bool Pipeline::complete(Stage stage, std::uint64_t seed) const {
  return fs::exists(stage_dir(stage, seed) / "complete.json");
}

void Pipeline::require(Stage needed, Stage by, std::uint64_t seed) const {
  if (!complete(needed, seed))
    throw DependencyError(fmt::format("stage '{}' needs the output of '{}' (seed {}); run `msr {}` first",
                                      to_string(by), to_string(needed), seed, to_string(needed)));
}

std::vector<int> Pipeline::folds(std::optional<int> fold) const {
  if (fold) {
    if (*fold < 0 || *fold >= config_.n_folds)
      throw ConfigError(fmt::format("fold {} outside [0, {})", *fold, config_.n_folds));
    return {*fold};
  }
  std::vector<int> out;
  for (int f = 0; f < config_.n_folds; ++f) out.push_back(f);
  return out;
}

bool Pipeline::all_folds_present(Stage stage, std::uint64_t seed, const std::string& prefix) const {
  for (int f = 0; f < config_.n_folds; ++f)
    if (!fs::exists(stage_dir(stage, seed) / fold_file(prefix, f, prefix == "loss_fold" ? ".json" : ".jsonl")))
      return false;
  return true;
}

void Pipeline::write_manifest(const RunManifest& manifest) const {
  fs::path path = config_.workdir / "manifest.json";
  json merged = manifest.to_json();
  write_file_atomic(path, merged.dump(2));
}

RunManifest Pipeline::run(const std::vector<Stage>& stages, bool force, std::optional<int> fold) {
  RunManifest manifest;
  manifest.config_fingerprint = config_fingerprint();
  std::set<Stage> wanted(stages.begin(), stages.end());
  for (auto seed : config_.seeds) {
    for (Stage s : kOrder) {
      if (!wanted.contains(s)) continue;
      if (seed_independent(s) && seed != config_.seeds.front() && manifest.find(to_string(s))) continue;
      manifest.stages.push_back(run_stage(s, seed, fold, force));
      write_manifest(manifest);
    }
  }
  if (wanted.contains(Stage::kEvaluate)) {
    auto report = combined_report();
    write_file_atomic(config_.workdir / "report.json", eval::to_json(report).dump(2));
    write_file_atomic(config_.workdir / "report.txt", eval::format_table(report));
  }
  return manifest;
}

StageRecord Pipeline::run_stage(Stage stage, std::uint64_t seed, std::optional<int> fold, bool force) {
  StageRecord rec;
  rec.stage = to_string(stage);
  if (!seed_independent(stage)) rec.seed = seed;
  rec.fingerprint = fingerprint(stage, seed);

  if (complete(stage, seed) && !force) {
    rec.reused = true;
    spdlog::info("{}: complete, reusing {}", rec.stage, stage_dir(stage, seed).string());
    return rec;
  }

  const auto before = gateway_->stats();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(stage_dir(stage, seed));
  bool finished = true;
  switch (stage) {
    case Stage::kIngest: do_ingest(seed); break;
    case Stage::kSummarizeItems: do_summarize(seed); break;
    case Stage::kInferPreferences: do_preferences(seed); break;
    case Stage::kBuildSft:
      do_build_sft(seed, fold, force);
      finished = all_folds_present(stage, seed, "fold");
      break;
    case Stage::kEvalLoss:
      do_eval_loss(seed, fold, force);
      finished = all_folds_present(stage, seed, "loss_fold");
      break;
    case Stage::kScore:
      do_score(seed, fold, force);
      finished = all_folds_present(stage, seed, "fold");
      break;
    case Stage::kEvaluate: do_evaluate(seed); break;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.calls = gateway_->stats() - before;
  if (finished)
    write_file_atomic(stage_dir(stage, seed) / "complete.json",
                      json{{"stage", rec.stage}, {"fingerprint", rec.fingerprint}}.dump());
  spdlog::info("{}: {} backend calls, {} cache hits, {:.2f}s", rec.stage, rec.calls.backend_calls(),
               rec.calls.cache_hits(), rec.wall_seconds);
  return rec;
}

void Pipeline::do_ingest(std::uint64_t seed) {
  auto cat = catalog::ingest(config_.interactions, config_.items, config_.thresholds);
  auto seqs = catalog::build_sequences(cat, config_.min_seq_len);
  auto splits = catalog::split_leave_one_out(seqs, cat, config_.n_folds, seed, config_.eval_ratio);
  const fs::path dir = stage_dir(Stage::kIngest, seed);

  std::vector<json> items, xs, sequences;
  for (const auto& [_, item] : cat.items()) items.push_back(catalog::to_json(item));
  for (const auto& x : cat.interactions())
    xs.push_back({{"user_id", x.user_id}, {"item_id", x.item_id}, {"timestamp", x.timestamp}});
  for (const auto& s : seqs) sequences.push_back({{"user_id", s.user_id}, {"items", s.items}});
  write_file_atomic(dir / "items.jsonl", to_jsonl(items));
  write_file_atomic(dir / "interactions.jsonl", to_jsonl(xs));
  write_file_atomic(dir / "sequences.jsonl", to_jsonl(sequences));
  catalog::write_splits(dir / "splits.jsonl", splits);
  const auto& r = cat.report();
  json report{{"interactions_read", r.interactions_read},
              {"duplicates_removed", r.duplicates_removed},
              {"users_removed", r.users_removed},
              {"items_removed", r.items_removed},
              {"interactions_removed", r.interactions_removed},
              {"filter_rounds", r.filter_rounds},
              {"users", seqs.size()},
              {"items", cat.items().size()}};
  write_file_atomic(dir / "ingest_report.json", report.dump(2));
  spdlog::info("ingest: {} users, {} items ({} duplicates, {} users and {} items filtered)", seqs.size(),
               cat.items().size(), r.duplicates_removed, r.users_removed, r.items_removed);
}

void Pipeline::do_summarize(std::uint64_t seed) {
  require(Stage::kIngest, Stage::kSummarizeItems, seed);
  bind_backends(seed);
  const fs::path in = stage_dir(Stage::kIngest, seed);
  auto cat = load_catalog(in);
  std::set<std::string> needed;
  for (const auto& s : load_sequences(in)) needed.insert(s.items.begin(), s.items.end() - 1);
  std::vector<const catalog::Item*> todo;
  for (const auto& id : needed) todo.push_back(&cat.item(id));

  items::SummarizerOptions opts;
  opts.target_words = config_.item_target_words;
  opts.length_tolerance = config_.length_tolerance;
  opts.fuse_cap_tokens = config_.fuse_cap_tokens;
  opts.max_tokens = config_.max_prompt_tokens;
  opts.single_call = config_.single_call;
  opts.missing_image = config_.missing_image;
  opts.temperature = config_.temperature;
  items::ItemSummarizer summarizer(*gateway_, prompts::TemplateSet::load(config_.templates_dir), opts);
  auto summaries = summarizer.summarize_all(todo, config_.summarize_mode);
  items::write_summaries(stage_dir(Stage::kSummarizeItems, seed) / "item_summaries.jsonl", summaries);
}

void Pipeline::do_preferences(std::uint64_t seed) {
  require(Stage::kIngest, Stage::kInferPreferences, seed);
  require(Stage::kSummarizeItems, Stage::kInferPreferences, seed);
  bind_backends(seed);
  preference::SummaryLookup lookup;
  for (const auto& [id, s] :
       items::read_summaries(stage_dir(Stage::kSummarizeItems, seed) / "item_summaries.jsonl"))
    lookup[id] = s.unified_summary;
  auto seqs = load_sequences(stage_dir(Stage::kIngest, seed));

  preference::PreferenceOptions opts;
  opts.block_size = config_.block_size;
  opts.summary_length = config_.summary_length;
  opts.max_prompt_tokens = config_.max_prompt_tokens;
  opts.temperature = config_.temperature;
  preference::PreferenceEngine engine(*gateway_, prompts::TemplateSet::load(config_.templates_dir), opts);

  std::vector<preference::PreferenceState> states(seqs.size());
  parallel_for(seqs.size(), gateway_->max_in_flight(Role::kPreferenceLlm), [&](std::size_t i) {
    const auto& s = seqs[i];
    std::vector<std::string> history(s.items.begin(), s.items.end() - 1);
    states[i] = engine.infer_preference(s.user_id, history, config_.preference_mode, lookup);
  });
  preference::write_preferences(stage_dir(Stage::kInferPreferences, seed) / "preferences.jsonl", states);
}

void Pipeline::do_build_sft(std::uint64_t seed, std::optional<int> fold, bool force) {
  require(Stage::kIngest, Stage::kBuildSft, seed);
  require(Stage::kInferPreferences, Stage::kBuildSft, seed);
  bind_backends(seed);
  const fs::path in = stage_dir(Stage::kIngest, seed);
  auto cat = load_catalog(in);
  auto splits = catalog::read_splits(in / "splits.jsonl");
  std::map<std::string, std::string> prefs;
  for (const auto& [u, s] :
       preference::read_preferences(stage_dir(Stage::kInferPreferences, seed) / "preferences.jsonl"))
    prefs[u] = s.summary;

  recommender::RecommenderOptions ropts;
  ropts.max_prompt_tokens = config_.max_prompt_tokens;
  ropts.top_logprobs = config_.top_logprobs;
  recommender::Recommender builder(*gateway_, prompts::TemplateSet::load(config_.templates_dir), ropts);
  for (int f : folds(fold)) {
    fs::path out = stage_dir(Stage::kBuildSft, seed) / fold_file("fold", f, ".jsonl");
    if (fs::exists(out) && !force) continue;
    auto ds = sft::build_sft_dataset(splits, prefs, cat, builder, config_.train_ratio, seed, f);
    write_file_atomic(out, sft::serialize(ds));
  }
}

void Pipeline::do_eval_loss(std::uint64_t seed, std::optional<int> fold, bool force) {
  bind_backends(seed);
  for (int f : folds(fold)) {
    fs::path in = stage_dir(Stage::kBuildSft, seed) / fold_file("fold", f, ".jsonl");
    if (!fs::exists(in))
      throw DependencyError(fmt::format("stage 'eval-loss' needs build-sft output for fold {} (seed {}); "
                                        "run `msr build-sft` first", f, seed));
    fs::path out = stage_dir(Stage::kEvalLoss, seed) / fold_file("loss_fold", f, ".json");
    if (fs::exists(out) && !force) continue;
    auto ds = sft::parse_dataset(in);
    auto report = sft::eval_sft_loss(ds.examples, *gateway_, config_.loss_span);
    write_file_atomic(out, sft::to_json(report).dump(2));
    spdlog::info("eval-loss fold {}: mean loss {:.6f} over {} examples", f, report.mean, ds.examples.size());
  }
}

void Pipeline::do_score(std::uint64_t seed, std::optional<int> fold, bool force) {
  require(Stage::kIngest, Stage::kScore, seed);
  require(Stage::kInferPreferences, Stage::kScore, seed);
  bind_backends(seed);
  const fs::path in = stage_dir(Stage::kIngest, seed);
  auto cat = load_catalog(in);
  auto splits = catalog::read_splits(in / "splits.jsonl");
  auto prefs = preference::read_preferences(stage_dir(Stage::kInferPreferences, seed) / "preferences.jsonl");

  recommender::RecommenderOptions ropts;
  ropts.top_logprobs = config_.top_logprobs;
  ropts.policy = config_.extraction_policy;
  ropts.attach_images = config_.attach_images;
  ropts.max_prompt_tokens = config_.max_prompt_tokens;
  ropts.temperature = config_.temperature;
  recommender::Recommender rec(*gateway_, prompts::TemplateSet::load(config_.templates_dir), ropts);

  for (int f : folds(fold)) {
    fs::path out = stage_dir(Stage::kScore, seed) / fold_file("fold", f, ".jsonl");
    if (fs::exists(out) && !force) continue;
    std::vector<const catalog::Split*> users;
    for (const auto& s : splits)
      if (s.fold == f) users.push_back(&s);

    struct Task {
      std::size_t user;
      std::string item;
    };
    std::vector<Task> tasks;
    for (std::size_t u = 0; u < users.size(); ++u) {
      auto pref = prefs.find(users[u]->user_id);
      if (pref == prefs.end())
        throw DependencyError("no inferred preference for user " + users[u]->user_id);
      tasks.push_back({u, users[u]->target});
      for (const auto& n : users[u]->negatives) tasks.push_back({u, n});
    }
    std::vector<std::optional<recommender::ScoredCandidate>> scored(tasks.size());
    std::vector<std::string> failure(users.size());
    std::mutex failure_mu;
    parallel_for(tasks.size(), gateway_->max_in_flight(Role::kRecommenderMllm), [&](std::size_t i) {
      const auto& user = *users[tasks[i].user];
      try {
        scored[i] = rec.score(user.user_id, prefs.at(user.user_id).summary, cat.item(tasks[i].item));
      } catch (const Error& e) {
        std::lock_guard lock(failure_mu);
        if (failure[tasks[i].user].empty()) failure[tasks[i].user] = e.what();
      }
    });

    std::vector<json> records;
    std::size_t next = 0;
    for (std::size_t u = 0; u < users.size(); ++u) {
      const std::size_t n = 1 + users[u]->negatives.size();
      if (!failure[u].empty()) {
        spdlog::error("user {}: scoring failed, record dropped: {}", users[u]->user_id, failure[u]);
        next += n;
        continue;
      }
      std::vector<recommender::ScoredCandidate> mine;
      for (std::size_t j = 0; j < n; ++j) mine.push_back(*scored[next + j]);
      next += n;
      for (const auto& c : recommender::rank(std::move(mine))) {
        json r = recommender::to_json(c);
        r["user_id"] = users[u]->user_id;
        r["is_target"] = c.item_id == users[u]->target;
        records.push_back(std::move(r));
      }
    }
    write_file_atomic(out, to_jsonl(records));
  }
}

void Pipeline::do_evaluate(std::uint64_t seed) {
  require(Stage::kScore, Stage::kEvaluate, seed);
  std::vector<eval::FoldMetrics> folds_out;
  for (int f = 0; f < config_.n_folds; ++f) {
    std::map<std::string, std::vector<std::pair<std::string, double>>> negatives;
    std::map<std::string, std::pair<std::string, double>> positive;
    read_jsonl(stage_dir(Stage::kScore, seed) / fold_file("fold", f, ".jsonl"), [&](std::size_t, const json& r) {
      const auto user = r.at("user_id").get<std::string>();
      const auto item = r.at("item_id").get<std::string>();
      const double p = r.at("p").get<double>();
      if (r.at("is_target").get<bool>())
        positive[user] = {item, p};
      else
        negatives[user].emplace_back(item, p);
    });
    std::vector<eval::UserEvalRecord> records;
    for (const auto& [user, pos] : positive) {
      const auto& negs = negatives[user];
      if (negs.size() != config_.eval_ratio)
        throw InputError(fmt::format("user {} has {} negatives, expected {}", user, negs.size(), config_.eval_ratio));
      records.push_back(eval::make_record(user, pos.first, pos.second, negs));
    }
    folds_out.push_back(eval::evaluate(f, records, config_.k, seed));
  }
  auto report = eval::aggregate(folds_out, config_.k, report_fingerprint());
  const fs::path dir = stage_dir(Stage::kEvaluate, seed);
  write_file_atomic(dir / "report.json", eval::to_json(report).dump(2));
  write_file_atomic(dir / "report.txt", eval::format_table(report));
}

json Pipeline::report_fingerprint() const {
  return json{{"summarize_mode", items::to_string(config_.summarize_mode)},
              {"preference_mode", preference::to_string(config_.preference_mode)},
              {"block_size", config_.block_size},
              {"summary_length", config_.summary_length},
              {"seeds", config_.seeds},
              {"k", config_.k},
              {"config_fingerprint", config_fingerprint()}};
}

eval::EvalReport Pipeline::combined_report() const {
  std::vector<eval::FoldMetrics> all;
  for (auto seed : config_.seeds) {
    require(Stage::kEvaluate, Stage::kEvaluate, seed);
    auto r = eval::report_from_json(json::parse(read_file(stage_dir(Stage::kEvaluate, seed) / "report.json")));
    all.insert(all.end(), r.per_fold.begin(), r.per_fold.end());
  }
  return eval::aggregate(std::move(all), config_.k, report_fingerprint());
}

json SweepReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    json row{{"value", r.value},
             {"status", r.ok ? "ok" : "failed"},
             {"preference_calls", r.preference_calls},
             {"item_calls", r.item_calls},
             {"items_reused", r.items_reused},
             {"preferences_reused", r.preferences_reused}};
    if (r.ok)
      row["report"] = eval::to_json(r.report);
    else
      row["error"] = r.error;
    rows_json.push_back(std::move(row));
  }
  return json{{"parameter", parameter}, {"rows", rows_json}};
}

std::string SweepReport::table() const {
  const std::size_t k = rows.empty() || !rows.front().ok ? 5 : rows.front().report.k;
  std::string out = fmt::format("{:<16} {:>16} {:>16} {:>16}  {}\n", parameter, "AUC",
                                fmt::format("HR@{}", k), fmt::format("MRR@{}", k), "status");
  for (const auto& r : rows) {
    if (!r.ok) {
      out += fmt::format("{:<16} {:>16} {:>16} {:>16}  failed: {}\n", r.value, "-", "-", "-", r.error);
      continue;
    }
    auto cell = [](const eval::MetricSummary& m) { return fmt::format("{:.4f}±{:.4f}", m.mean, m.half_width); };
    out += fmt::format("{:<16} {:>16} {:>16} {:>16}  ok\n", r.value, cell(r.report.auc),
                       cell(r.report.hr_at_k), cell(r.report.mrr_at_k));
  }
  return out;
}

std::string SweepReport::csv() const {
  std::string out = "value,auc,auc_hw,hr,hr_hw,mrr,mrr_hw,status\n";
  for (const auto& r : rows) {
    if (!r.ok) {
      out += fmt::format("{},,,,,,,failed\n", r.value);
      continue;
    }
    const auto& e = r.report;
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},ok\n", r.value, e.auc.mean,
                       e.auc.half_width, e.hr_at_k.mean, e.hr_at_k.half_width, e.mrr_at_k.mean,
                       e.mrr_at_k.half_width);
  }
  return out;
}

SweepReport sweep(const RunConfig& config, const std::string& parameter,
                  const std::vector<std::size_t>& values, std::shared_ptr<gateway::Gateway> gw) {
  if (parameter != "block_size" && parameter != "summary_length")
    throw ConfigError("sweep parameter must be block_size or summary_length, got '" + parameter + "'");
  if (values.empty()) throw ConfigError("sweep needs at least one value");

  SweepReport report;
  report.parameter = parameter;
  const std::vector<Stage> stages{Stage::kIngest, Stage::kSummarizeItems, Stage::kInferPreferences,
                                  Stage::kScore, Stage::kEvaluate};
  for (std::size_t v : values) {
    SweepRow row;
    row.value = v;
    try {
      RunConfig c = config;
      (parameter == "block_size" ? c.block_size : c.summary_length) = v;
      Pipeline p(c, gw);
      auto manifest = p.run(stages);
      row.report = p.combined_report();
      for (const auto& s : manifest.stages) {
        if (s.stage == to_string(Stage::kSummarizeItems)) {
          row.items_reused = s.reused;
          row.item_calls += s.calls.backend_calls();
        } else if (s.stage == to_string(Stage::kInferPreferences)) {
          row.preferences_reused = s.reused;
          row.preference_calls += s.calls.backend_calls();
        }
      }
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
      spdlog::error("sweep {}={} failed: {}", parameter, v, e.what());
    }
    report.rows.push_back(std::move(row));
  }
  const fs::path dir = config.workdir / "sweeps";
  write_file_atomic(dir / (parameter + ".json"), report.to_json().dump(2));
  write_file_atomic(dir / (parameter + ".csv"), report.csv());
  write_file_atomic(dir / (parameter + ".txt"), report.table());
  return report;
}

}  // namespace msr::pipeline
