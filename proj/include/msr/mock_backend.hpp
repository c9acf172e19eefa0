#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>

#include "msr/gateway.hpp"

namespace msr::gateway {

/// How the mock answers yes/no probes and teacher-forced scoring. Free-form
/// generation is always the deterministic hash_text generator.
struct MockBehavior {
  enum class Kind { kHashText, kOracleYes, kUniformLogprob };

  Kind kind = Kind::kHashText;
  /// oracle_yes: first-token mass on the correct answer.
  double oracle_p = 1.0;
  /// oracle_yes: probe keys (see probe_key) of labeled-positive pairs.
  std::set<std::string> positives;
  /// uniform_logprob: every scored token gets -cost.
  double uniform_cost = std::log(2.0);
  /// Artificial per-call latency, for concurrency instrumentation.
  std::chrono::milliseconds latency{0};

  static MockBehavior hash_text() { return {}; }
  static MockBehavior oracle_yes(double p, std::set<std::string> positives);
  static MockBehavior uniform_logprob(double cost);

  std::string name() const;
};

/// Deterministic stand-in for a chat-completions server.
///
/// Generation: a 10-hex marker "<m:...>" derived from the request hash, then
/// every distinct marker found in the prompt (most recent `max_echo`), then
/// filler words. The filler length follows an "about N words" / "at most N
/// words" instruction in the prompt (default 40) and is cut to max_tokens.
/// Tokenization is whitespace splitting.
class MockBackend : public Backend {
 public:
  MockBackend(std::uint64_t seed, MockBehavior behavior, std::string model = "mock-model");

  std::string id() const override;
  std::string model() const override { return model_; }
  Capabilities capabilities() const override { return {true, true, true}; }
  CompletionResult complete(const CompletionRequest& request) override;

  std::size_t calls() const { return calls_.load(); }
  std::size_t calls(Role role) const;
  std::size_t max_in_flight_observed() const { return max_in_flight_.load(); }
  void reset_counters();

  const MockBehavior& behavior() const { return behavior_; }
  std::size_t max_echo = 12;
  double chars_per_token = 4.0;

 private:
  std::string generate(const CompletionRequest& request, const std::string& digest) const;
  std::vector<TokenLogprob> first_token(const CompletionRequest& request,
                                        const std::string& digest) const;
  std::vector<double> score_tokens(const CompletionRequest& request,
                                   const std::string& digest) const;

  std::uint64_t seed_;
  MockBehavior behavior_;
  std::string model_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_in_flight_{0};
  mutable std::mutex role_mu_;
  std::map<Role, std::size_t> by_role_;
};

std::shared_ptr<MockBackend> mock_backend(std::uint64_t seed, MockBehavior behavior);

}  // namespace msr::gateway
