#include <gtest/gtest.h>

#include <thread>

#include "msr/error.hpp"
#include "msr/gateway.hpp"
#include "msr/mock_backend.hpp"
#include "msr/synthetic.hpp"
#include "test_support.hpp"

using namespace msr;
using namespace msr::gateway;
using msr::fx::TempDir;

namespace {

CompletionRequest ask(const std::string& text, Role role = Role::kPreferenceLlm) {
  CompletionRequest r;
  r.role = role;
  r.messages.push_back({Speaker::kUser, text});
  r.options.max_tokens = 64;
  return r;
}

CompletionRequest probe(const std::string& text) {
  auto r = ask(text, Role::kRecommenderMllm);
  r.options.max_tokens = 1;
  r.options.top_logprobs = 5;
  return r;
}

/// Fails with TransientError the first `failures` calls.
class FlakyBackend : public Backend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  std::string id() const override { return "flaky"; }
  std::string model() const override { return "m"; }
  Capabilities capabilities() const override { return {true, false, false}; }
  CompletionResult complete(const CompletionRequest&) override {
    if (calls_++ < failures_) throw TransientError("503");
    CompletionResult r;
    r.text = "ok";
    r.first_token_logprobs = {{"yes", -0.1}};
    return r;
  }
  int calls() const { return calls_; }

 private:
  int failures_;
  std::atomic<int> calls_{0};
};

}  // namespace

TEST(Validate, RejectsBrokenRequests) {
  auto r = ask("hi");
  r.messages.clear();
  EXPECT_THROW(validate(r), RequestError);
  r = ask("hi");
  r.options.max_tokens = 0;
  EXPECT_THROW(validate(r), RequestError);
  r = ask("hi");
  r.options.temperature = -1;
  EXPECT_THROW(validate(r), RequestError);
  r = ask("hi");
  r.images.push_back(make_image(synthetic::make_png(1, 1, 0, 0, 0), "x"));
  EXPECT_THROW(validate(r), RequestError);
  r.role = Role::kItemMllm;
  EXPECT_NO_THROW(validate(r));
}

TEST(Image, SniffsFormatsAndRejectsTruncation) {
  auto png = synthetic::make_png(3, 2, 1, 2, 3);
  EXPECT_EQ(sniff_image(png), "image/png");
  auto cut = png;
  cut.resize(cut.size() - 5);
  EXPECT_EQ(sniff_image(cut), "");
  EXPECT_THROW(make_image(cut, "x"), ImageError);
  std::vector<std::uint8_t> jpeg{0xff, 0xd8, 0xff, 0xe0, 0, 0, 0xff, 0xd9};
  EXPECT_EQ(sniff_image(jpeg), "image/jpeg");
  EXPECT_EQ(sniff_image({'h', 'e', 'l', 'l', 'o'}), "");
  EXPECT_THROW(load_image("/nonexistent.png", "x"), ImageError);
}

TEST(Cache, MissThenHitReturnsEqualPayload) {
  TempDir dir;
  auto mock = gateway::mock_backend(1, MockBehavior::hash_text());
  auto gw = fx::mock_gateway(mock, 4, dir.path());
  auto first = gw->complete(probe("Is it a match?"));
  auto second = gw->complete(probe("Is it a match?"));
  EXPECT_FALSE(first.cache_hit);
  EXPECT_TRUE(second.cache_hit);
  EXPECT_TRUE(first.same_payload(second));
  EXPECT_EQ(mock->calls(), 1u);
  EXPECT_EQ(gw->stats().backend_calls(), 1u);
  EXPECT_EQ(gw->stats().cache_hits(), 1u);
}

TEST(Cache, PersistsAcrossGatewayInstances) {
  TempDir dir;
  auto mock = gateway::mock_backend(1, MockBehavior::hash_text());
  auto a = fx::mock_gateway(mock, 4, dir.path())->complete(ask("summarize"));
  auto gw2 = fx::mock_gateway(mock, 4, dir.path());
  auto b = gw2->complete(ask("summarize"));
  EXPECT_TRUE(b.cache_hit);
  EXPECT_TRUE(a.same_payload(b));
  EXPECT_EQ(mock->calls(), 1u);
}

TEST(Cache, KeyCoversEveryResponseAffectingField) {
  auto mock = gateway::mock_backend(1, MockBehavior::hash_text());
  auto base = probe("q");
  const auto k = cache_key(*mock, base);
  auto v = base;
  v.options.top_logprobs = 6;
  EXPECT_NE(cache_key(*mock, v), k);
  v = base;
  v.options.temperature = 0.5;
  EXPECT_NE(cache_key(*mock, v), k);
  v = base;
  v.probe = probe_key("u", "i");
  EXPECT_NE(cache_key(*mock, v), k);
  v = base;
  v.role = Role::kItemMllm;
  EXPECT_EQ(cache_key(*mock, v), k);
  v.images.push_back(make_image(synthetic::make_png(1, 1, 0, 0, 0), "x"));
  EXPECT_NE(cache_key(*mock, v), k);
  auto other = gateway::mock_backend(2, MockBehavior::hash_text());
  EXPECT_NE(cache_key(*other, base), k);
}

TEST(Cache, EntryLayoutAndAtomicStore) {
  TempDir dir;
  ResponseCache cache(dir.path());
  CompletionResult r;
  r.text = "hello";
  const std::string key(64, 'a');
  auto path = cache.entry_path("be/x", "model:1", key);
  EXPECT_EQ(path, dir / "be_x/model_1/aa" / (key + ".json"));
  std::vector<std::jthread> writers;
  for (int t = 0; t < 8; ++t)
    writers.emplace_back([&] {
      for (int i = 0; i < 25; ++i) cache.store("be/x", "model:1", key, r);
    });
  writers.clear();
  auto back = cache.load("be/x", "model:1", key);
  ASSERT_TRUE(back);
  EXPECT_EQ(back->text, "hello");
  std::size_t files = 0;
  for (auto& e : std::filesystem::directory_iterator(path.parent_path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
}

TEST(Cache, CorruptEntryIsAMiss) {
  TempDir dir;
  ResponseCache cache(dir.path());
  const std::string key(64, 'b');
  fx::write_text(cache.entry_path("b", "m", key), "{not json");
  EXPECT_FALSE(cache.load("b", "m", key));
}

TEST(Gateway, NoCacheAlwaysCallsBackend) {
  auto mock = gateway::mock_backend(1, MockBehavior::hash_text());
  auto gw = fx::mock_gateway(mock);
  gw->complete(ask("x"));
  gw->complete(ask("x"));
  EXPECT_EQ(mock->calls(), 2u);
}

TEST(Gateway, ConcurrencyNeverExceedsLaneLimit) {
  auto behavior = MockBehavior::hash_text();
  behavior.latency = std::chrono::milliseconds(5);
  auto mock = gateway::mock_backend(1, behavior);
  auto gw = fx::mock_gateway(mock, 3);
  parallel_for(60, 16, [&](std::size_t i) {
    gw->complete(ask("request " + std::to_string(i), gateway::kAllRoles[i % 3]));
  });
  EXPECT_EQ(mock->calls(), 60u);
  EXPECT_LE(mock->max_in_flight_observed(), 3u);
  EXPECT_GE(mock->max_in_flight_observed(), 2u);
}

TEST(Gateway, SeparateBackendsHaveSeparateLanes) {
  auto behavior = MockBehavior::hash_text();
  behavior.latency = std::chrono::milliseconds(5);
  auto a = gateway::mock_backend(1, behavior);
  auto b = gateway::mock_backend(2, behavior);
  Gateway gw({std::nullopt, 4});
  gw.bind(Role::kItemMllm, a, 2);
  gw.bind(Role::kPreferenceLlm, b, 1);
  EXPECT_EQ(gw.max_in_flight(Role::kItemMllm), 2u);
  EXPECT_EQ(gw.max_in_flight(Role::kPreferenceLlm), 1u);
  parallel_for(40, 8, [&](std::size_t i) {
    gw.complete(ask("r" + std::to_string(i), i % 2 ? Role::kItemMllm : Role::kPreferenceLlm));
  });
  EXPECT_LE(a->max_in_flight_observed(), 2u);
  EXPECT_EQ(b->max_in_flight_observed(), 1u);
}

TEST(Gateway, RetriesTransientFailures) {
  auto flaky = std::make_shared<FlakyBackend>(2);
  Gateway gw({std::nullopt, 4});
  gw.bind(Role::kRecommenderMllm, flaky, 1, {3, std::chrono::milliseconds(1), std::chrono::milliseconds(2)});
  EXPECT_EQ(gw.complete(probe("q")).text, "ok");
  EXPECT_EQ(flaky->calls(), 3);

  auto hopeless = std::make_shared<FlakyBackend>(10);
  gw.bind(Role::kItemMllm, hopeless, 1, {2, std::chrono::milliseconds(1), std::chrono::milliseconds(1)});
  try {
    gw.complete(ask("q", Role::kItemMllm));
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBackend);
  }
  EXPECT_EQ(hopeless->calls(), 2);
}

TEST(Gateway, CapabilityChecks) {
  auto flaky = std::make_shared<FlakyBackend>(0);
  Gateway gw({std::nullopt, 4});
  gw.bind(Role::kItemMllm, flaky, 1);
  auto with_image = ask("describe", Role::kItemMllm);
  with_image.images.push_back(make_image(synthetic::make_png(1, 1, 0, 0, 0), "x"));
  EXPECT_THROW(gw.complete(with_image), CapabilityError);
  auto forced = ask("q", Role::kItemMllm);
  forced.options.teacher_forced_completion = "yes";
  EXPECT_THROW(gw.teacher_forced_logprobs(forced), CapabilityError);
  EXPECT_THROW(gw.complete(ask("q", Role::kRecommenderMllm)), ConfigError);
}

TEST(Mock, FollowsLengthInstructionAndTokenCap) {
  auto mock = gateway::mock_backend(1, MockBehavior::hash_text());
  auto r = mock->complete(ask("Summarize in about 30 words."));
  EXPECT_EQ(word_count(r.text), 31u);  // marker + 30 filler words
  auto capped = ask("Summarize in about 300 words.");
  capped.options.max_tokens = 20;
  EXPECT_LE(estimate_tokens(mock->complete(capped).text, 4), 20u);
}

TEST(Mock, EchoesMarkersFromPrompt) {
  auto mock = gateway::mock_backend(1, MockBehavior::hash_text());
  auto a = mock->complete(ask("first"));
  auto marker = a.text.substr(0, 15);
  ASSERT_EQ(marker.rfind("<m:", 0), 0u);
  auto b = mock->complete(ask("context: " + a.text));
  EXPECT_NE(b.text.find(marker), std::string::npos);
}

TEST(Mock, OracleAnswersByProbe) {
  auto mock = gateway::mock_backend(1, MockBehavior::oracle_yes(0.9, {probe_key("u", "pos")}));
  auto q = probe("?");
  q.probe = probe_key("u", "pos");
  auto yes = mock->complete(q);
  EXPECT_EQ(yes.first_token_logprobs.front().token, "yes");
  EXPECT_NEAR(std::exp(yes.first_token_logprobs.front().logprob), 0.9, 1e-12);
  q.probe = probe_key("u", "neg");
  EXPECT_EQ(mock->complete(q).first_token_logprobs.front().token, "no");
}
