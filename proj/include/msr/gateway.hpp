#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "msr/error.hpp"
#include "msr/image.hpp"
#include "msr/util.hpp"

namespace msr::gateway {

enum class Role { kItemMllm, kPreferenceLlm, kRecommenderMllm };
enum class Speaker { kSystem, kUser, kAssistant };

std::string to_string(Role role);
Role role_from_string(const std::string& name);
std::string to_string(Speaker speaker);

inline constexpr Role kAllRoles[] = {Role::kItemMllm, Role::kPreferenceLlm,
                                     Role::kRecommenderMllm};

struct Message {
  Speaker speaker = Speaker::kUser;
  std::string text;
};

/// Which tokens a teacher-forced request scores: only the supplied
/// completion, or the whole prompt followed by it.
enum class LossSpan { kCompletion, kFull };

struct RequestOptions {
  int max_tokens = 512;
  double temperature = 0.0;
  int top_logprobs = 0;
  std::optional<std::string> teacher_forced_completion;
  LossSpan loss_span = LossSpan::kCompletion;
};

struct CompletionRequest {
  Role role = Role::kPreferenceLlm;
  std::vector<Message> messages;
  std::vector<ImagePayload> images;
  RequestOptions options;
  /// Opaque label-lookup key for oracle backends ("user\x1fitem"). Never
  /// sent over the wire; part of the cache key when set.
  std::string probe;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;

  bool operator==(const TokenLogprob&) const = default;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;

  bool operator==(const Usage&) const = default;
};

struct CompletionResult {
  std::string text;
  std::vector<TokenLogprob> first_token_logprobs;
  std::optional<std::vector<double>> token_logprobs;
  Usage usage;
  bool cache_hit = false;

  /// Field-wise equality ignoring cache_hit.
  bool same_payload(const CompletionResult& other) const;
};

json to_json(const CompletionResult& result);
CompletionResult result_from_json(const json& j);

/// Throws RequestError when the request breaks its invariants.
void validate(const CompletionRequest& request);

struct Capabilities {
  bool logprobs = true;
  bool teacher_forcing = false;
  bool images = true;
};

/// Transient failure (connection reset, 429, 5xx); eligible for retry.
struct TransientError : TransportError {
  using TransportError::TransportError;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual std::string model() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
};

/// Probe key for a (user, candidate) scoring request.
std::string probe_key(const std::string& user_id, const std::string& item_id);

/// Canonical JSON of everything that can change a response.
json canonical_request(const Backend& backend, const CompletionRequest& request);
std::string cache_key(const Backend& backend, const CompletionRequest& request);

/// Content-addressed response store:
///   <root>/<backend>/<model>/<key[0..2]>/<key>.json
/// Reads take no lock; writes go through temp-file + rename.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path entry_path(const std::string& backend, const std::string& model,
                                   const std::string& key) const;
  std::optional<CompletionResult> load(const std::string& backend, const std::string& model,
                                       const std::string& key) const;
  void store(const std::string& backend, const std::string& model, const std::string& key,
             const CompletionResult& result) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{250};
  std::chrono::milliseconds max_delay{8000};
};

struct RoleStats {
  std::size_t backend_calls = 0;
  std::size_t cache_hits = 0;
};

struct GatewayStats {
  std::map<Role, RoleStats> by_role;

  std::size_t backend_calls() const;
  std::size_t cache_hits() const;
  GatewayStats operator-(const GatewayStats& earlier) const;
};

/// Thread-safe front for all model traffic. Each bound backend gets its own
/// in-flight limit, shared by every role bound to it.
class Gateway {
 public:
  struct Options {
    std::optional<std::filesystem::path> cache_dir;
    double chars_per_token = 4.0;
  };

  explicit Gateway(Options options);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void bind(Role role, std::shared_ptr<Backend> backend, std::size_t max_in_flight = 4,
            RetryPolicy retry = {});
  bool bound(Role role) const;
  Backend& backend(Role role) const;
  std::size_t max_in_flight(Role role) const;

  CompletionResult complete(const CompletionRequest& request);
  /// Requires options.teacher_forced_completion; the result's token_logprobs
  /// covers exactly the scored span.
  CompletionResult teacher_forced_logprobs(const CompletionRequest& request);

  GatewayStats stats() const;
  double chars_per_token() const { return options_.chars_per_token; }
  const ResponseCache* cache() const { return cache_ ? &*cache_ : nullptr; }

 private:
  struct Lane;
  struct Binding {
    std::shared_ptr<Backend> backend;
    std::shared_ptr<Lane> lane;
    RetryPolicy retry;
  };

  const Binding& binding(Role role) const;
  CompletionResult dispatch(const Binding& b, const CompletionRequest& request);
  void count(Role role, bool hit);

  Options options_;
  std::optional<ResponseCache> cache_;
  std::map<Role, Binding> bindings_;
  mutable std::mutex stats_mu_;
  GatewayStats stats_;
};

}  // namespace msr::gateway
