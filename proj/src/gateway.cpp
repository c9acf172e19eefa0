#include "msr/gateway.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <thread>

namespace msr::gateway {

namespace fs = std::filesystem;

std::string to_string(Role role) {
  switch (role) {
    case Role::kItemMllm: return "item_mllm";
    case Role::kPreferenceLlm: return "preference_llm";
    case Role::kRecommenderMllm: return "recommender_mllm";
  }
  return "unknown";
}

Role role_from_string(const std::string& name) {
  for (Role r : kAllRoles)
    if (to_string(r) == name) return r;
  throw ConfigError("unknown role '" + name + "'");
}

std::string to_string(Speaker speaker) {
  switch (speaker) {
    case Speaker::kSystem: return "system";
    case Speaker::kUser: return "user";
    case Speaker::kAssistant: return "assistant";
  }
  return "user";
}

bool CompletionResult::same_payload(const CompletionResult& o) const {
  return text == o.text && first_token_logprobs == o.first_token_logprobs &&
         token_logprobs == o.token_logprobs && usage == o.usage;
}

json to_json(const CompletionResult& r) {
  json top = json::array();
  for (const auto& t : r.first_token_logprobs) top.push_back({{"token", t.token}, {"logprob", t.logprob}});
  json j{{"text", r.text},
         {"first_token_logprobs", top},
         {"usage", {{"prompt_tokens", r.usage.prompt_tokens},
                    {"completion_tokens", r.usage.completion_tokens}}}};
  j["token_logprobs"] = r.token_logprobs ? json(*r.token_logprobs) : json(nullptr);
  return j;
}

CompletionResult result_from_json(const json& j) {
  CompletionResult r;
  r.text = j.at("text").get<std::string>();
  for (const auto& t : j.at("first_token_logprobs"))
    r.first_token_logprobs.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
  if (auto it = j.find("token_logprobs"); it != j.end() && !it->is_null())
    r.token_logprobs = it->get<std::vector<double>>();
  r.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<int>();
  r.usage.completion_tokens = j.at("usage").at("completion_tokens").get<int>();
  return r;
}

void validate(const CompletionRequest& req) {
  const auto& o = req.options;
  if (req.messages.empty()) throw RequestError("request has no messages");
  if (o.max_tokens < 1) throw RequestError("max_tokens must be >= 1");
  if (o.temperature < 0) throw RequestError("temperature must be >= 0");
  if (o.top_logprobs < 0) throw RequestError("top_logprobs must be >= 0");
  if (!req.images.empty() && req.role == Role::kPreferenceLlm)
    throw RequestError("images are not permitted for role preference_llm");
  if (o.teacher_forced_completion && o.teacher_forced_completion->empty())
    throw RequestError("teacher-forced completion is empty");
}

std::string probe_key(const std::string& user_id, const std::string& item_id) {
  return user_id + '\x1f' + item_id;
}

json canonical_request(const Backend& backend, const CompletionRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) messages.push_back({to_string(m.speaker), m.text});
  json images = json::array();
  for (const auto& img : req.images) images.push_back(img.content_hash);
  const auto& o = req.options;
  json options{{"max_tokens", o.max_tokens},
               {"temperature", o.temperature},
               {"top_logprobs", o.top_logprobs}};
  if (o.teacher_forced_completion) {
    options["teacher_forced_completion"] = *o.teacher_forced_completion;
    options["loss_span"] = o.loss_span == LossSpan::kFull ? "full" : "completion";
  }
  json j{{"backend", backend.id()},
         {"model", backend.model()},
         {"messages", messages},
         {"images", images},
         {"options", options}};
  if (!req.probe.empty()) j["probe"] = req.probe;
  return j;
}

std::string cache_key(const Backend& backend, const CompletionRequest& req) {
  return sha256_hex(canonical_request(backend, req).dump());
}

namespace {

std::string path_safe(std::string s) {
  for (char& c : s)
    if (c == '/' || c == '\\' || c == ':' || c == ' ') c = '_';
  return s;
}

void check_result(const CompletionResult& r, const CompletionRequest& req) {
  for (const auto& t : r.first_token_logprobs)
    if (t.logprob > 1e-9) throw TransportError("backend returned positive log-probability");
  if (req.options.top_logprobs > 0 && !req.options.teacher_forced_completion &&
      r.first_token_logprobs.empty())
    throw CapabilityError("backend returned no first-token log-probabilities");
  if (req.options.teacher_forced_completion && (!r.token_logprobs || r.token_logprobs->empty()))
    throw CapabilityError("backend returned no teacher-forced log-probabilities");
}

}  // namespace

fs::path ResponseCache::entry_path(const std::string& backend, const std::string& model,
                                   const std::string& key) const {
  return root_ / path_safe(backend) / path_safe(model) / key.substr(0, 2) / (key + ".json");
}

std::optional<CompletionResult> ResponseCache::load(const std::string& backend,
                                                    const std::string& model,
                                                    const std::string& key) const {
  fs::path p = entry_path(backend, model, key);
  std::error_code ec;
  if (!fs::exists(p, ec)) return std::nullopt;
  try {
    json j = json::parse(read_file(p));
    if (j.value("key", std::string{}) != key) return std::nullopt;
    return result_from_json(j.at("result"));
  } catch (const std::exception& e) {
    spdlog::warn("ignoring unreadable cache entry {}: {}", p.string(), e.what());
    return std::nullopt;
  }
}

void ResponseCache::store(const std::string& backend, const std::string& model,
                          const std::string& key, const CompletionResult& result) const {
  json j{{"key", key}, {"result", to_json(result)}};
  write_file_atomic(entry_path(backend, model, key), j.dump());
}

std::size_t GatewayStats::backend_calls() const {
  std::size_t n = 0;
  for (const auto& [_, s] : by_role) n += s.backend_calls;
  return n;
}

std::size_t GatewayStats::cache_hits() const {
  std::size_t n = 0;
  for (const auto& [_, s] : by_role) n += s.cache_hits;
  return n;
}

GatewayStats GatewayStats::operator-(const GatewayStats& earlier) const {
  GatewayStats out = *this;
  for (const auto& [role, s] : earlier.by_role) {
    auto& o = out.by_role[role];
    o.backend_calls -= s.backend_calls;
    o.cache_hits -= s.cache_hits;
  }
  return out;
}

struct Gateway::Lane {
  explicit Lane(std::size_t n) : limit(n), slots(static_cast<std::ptrdiff_t>(n)) {}
  std::size_t limit;
  std::counting_semaphore<4096> slots;
};

Gateway::Gateway(Options options) : options_(std::move(options)) {
  if (options_.chars_per_token <= 0) throw ConfigError("chars_per_token must be positive");
  if (options_.cache_dir) cache_.emplace(*options_.cache_dir);
}

Gateway::~Gateway() = default;

void Gateway::bind(Role role, std::shared_ptr<Backend> backend, std::size_t max_in_flight,
                   RetryPolicy retry) {
  if (!backend) throw ConfigError("null backend for role " + to_string(role));
  if (max_in_flight == 0 || max_in_flight > 4096)
    throw ConfigError("max_in_flight must be in [1, 4096]");
  if (retry.attempts < 1) throw ConfigError("retry attempts must be >= 1");
  std::shared_ptr<Lane> lane;
  for (const auto& [_, b] : bindings_)
    if (b.backend == backend) lane = b.lane;
  if (!lane) lane = std::make_shared<Lane>(max_in_flight);
  bindings_[role] = Binding{std::move(backend), std::move(lane), retry};
}

bool Gateway::bound(Role role) const { return bindings_.contains(role); }

const Gateway::Binding& Gateway::binding(Role role) const {
  auto it = bindings_.find(role);
  if (it == bindings_.end()) throw ConfigError("no backend configured for role " + to_string(role));
  return it->second;
}

Backend& Gateway::backend(Role role) const { return *binding(role).backend; }

std::size_t Gateway::max_in_flight(Role role) const { return binding(role).lane->limit; }

void Gateway::count(Role role, bool hit) {
  std::lock_guard lock(stats_mu_);
  auto& s = stats_.by_role[role];
  if (hit)
    ++s.cache_hits;
  else
    ++s.backend_calls;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

CompletionResult Gateway::dispatch(const Binding& b, const CompletionRequest& req) {
  std::chrono::milliseconds delay = b.retry.base_delay;
  for (int attempt = 1;; ++attempt) {
    try {
      b.lane->slots.acquire();
      struct Release {
        Lane& lane;
        ~Release() { lane.slots.release(); }
      } release{*b.lane};
      return b.backend->complete(req);
    } catch (const TransientError& e) {
      if (attempt >= b.retry.attempts)
        throw TransportError(b.backend->id() + ": giving up after " + std::to_string(attempt) +
                             " attempts: " + e.what());
      spdlog::warn("{}: transient failure (attempt {}/{}): {}", b.backend->id(), attempt,
                   b.retry.attempts, e.what());
    }
    std::this_thread::sleep_for(delay);
    delay = std::min(delay * 2, b.retry.max_delay);
  }
}

CompletionResult Gateway::complete(const CompletionRequest& req) {
  validate(req);
  const Binding& b = binding(req.role);
  const Capabilities caps = b.backend->capabilities();
  if (req.options.top_logprobs > 0 && !caps.logprobs)
    throw CapabilityError(b.backend->id() + " does not return log-probabilities");
  if (req.options.teacher_forced_completion && !caps.teacher_forcing)
    throw CapabilityError(b.backend->id() + " cannot score a provided completion");
  if (!req.images.empty() && !caps.images)
    throw CapabilityError(b.backend->id() + " does not accept images");

  std::string key;
  if (cache_) {
    key = cache_key(*b.backend, req);
    if (auto hit = cache_->load(b.backend->id(), b.backend->model(), key)) {
      count(req.role, true);
      hit->cache_hit = true;
      return *hit;
    }
  }
  CompletionResult result = dispatch(b, req);
  count(req.role, false);
  for (auto& t : result.first_token_logprobs) t.logprob = std::min(t.logprob, 0.0);
  check_result(result, req);
  result.cache_hit = false;
  if (cache_) cache_->store(b.backend->id(), b.backend->model(), key, result);
  return result;
}

CompletionResult Gateway::teacher_forced_logprobs(const CompletionRequest& req) {
  if (!req.options.teacher_forced_completion)
    throw RequestError("teacher-forced scoring needs a completion to score");
  if (req.options.teacher_forced_completion->empty())
    throw RequestError("teacher-forced completion is empty");
  return complete(req);
}

}  // namespace msr::gateway
