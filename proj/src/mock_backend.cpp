#include "msr/mock_backend.hpp"

#include <algorithm>
#include <regex>
#include <sstream>
#include <thread>

namespace msr::gateway {

namespace {

constexpr double kLogFloor = -27.631021115928547;  // ln(1e-12)

double safe_log(double p) { return p <= 0 ? kLogFloor : std::log(p); }

std::string prompt_text(const CompletionRequest& req) {
  std::string all;
  for (const auto& m : req.messages) {
    all += m.text;
    all.push_back('\n');
  }
  return all;
}

std::size_t instructed_words(const std::string& prompt) {
  static const std::regex kPattern(R"((?:about|at most|approximately) (\d+) words)",
                                   std::regex::icase);
  std::size_t words = 40;
  for (auto it = std::sregex_iterator(prompt.begin(), prompt.end(), kPattern);
       it != std::sregex_iterator(); ++it)
    words = static_cast<std::size_t>(std::stoul((*it)[1].str()));
  return words;
}

bool oracle_truth(const MockBehavior& b, const CompletionRequest& req) {
  return b.positives.contains(req.probe);
}

}  // namespace

MockBehavior MockBehavior::oracle_yes(double p, std::set<std::string> positives) {
  MockBehavior b;
  b.kind = Kind::kOracleYes;
  b.oracle_p = p;
  b.positives = std::move(positives);
  return b;
}

MockBehavior MockBehavior::uniform_logprob(double cost) {
  MockBehavior b;
  b.kind = Kind::kUniformLogprob;
  b.uniform_cost = cost;
  return b;
}

std::string MockBehavior::name() const {
  std::ostringstream ss;
  switch (kind) {
    case Kind::kHashText: ss << "hash_text"; break;
    case Kind::kOracleYes: {
      std::string labels;
      for (const auto& p : positives) labels += p + "\n";
      ss << "oracle_yes-p" << oracle_p << "-" << sha256_hex(labels).substr(0, 12);
      break;
    }
    case Kind::kUniformLogprob: ss << "uniform_logprob-c" << uniform_cost; break;
  }
  return ss.str();
}

MockBackend::MockBackend(std::uint64_t seed, MockBehavior behavior, std::string model)
    : seed_(seed), behavior_(std::move(behavior)), model_(std::move(model)) {}

std::string MockBackend::id() const {
  return "mock-" + behavior_.name() + "-s" + std::to_string(seed_);
}

std::size_t MockBackend::calls(Role role) const {
  std::lock_guard lock(role_mu_);
  auto it = by_role_.find(role);
  return it == by_role_.end() ? 0 : it->second;
}

void MockBackend::reset_counters() {
  calls_ = 0;
  max_in_flight_ = 0;
  std::lock_guard lock(role_mu_);
  by_role_.clear();
}

CompletionResult MockBackend::complete(const CompletionRequest& req) {
  std::size_t now = ++in_flight_;
  std::size_t seen = max_in_flight_.load();
  while (now > seen && !max_in_flight_.compare_exchange_weak(seen, now)) {
  }
  ++calls_;
  {
    std::lock_guard lock(role_mu_);
    ++by_role_[req.role];
  }
  if (behavior_.latency.count() > 0) std::this_thread::sleep_for(behavior_.latency);

  std::string material = std::to_string(seed_) + "\n" + canonical_request(*this, req).dump();
  std::string digest = sha256_hex(material);

  CompletionResult r;
  const std::string prompt = prompt_text(req);
  r.usage.prompt_tokens = static_cast<int>(estimate_tokens(prompt, chars_per_token));
  if (req.options.teacher_forced_completion) {
    r.text = *req.options.teacher_forced_completion;
    r.token_logprobs = score_tokens(req, digest);
  } else {
    if (req.options.top_logprobs > 0) {
      r.first_token_logprobs = first_token(req, digest);
      if (static_cast<int>(r.first_token_logprobs.size()) > req.options.top_logprobs)
        r.first_token_logprobs.resize(static_cast<std::size_t>(req.options.top_logprobs));
    }
    if (req.options.max_tokens <= 2 && !r.first_token_logprobs.empty())
      r.text = trim(r.first_token_logprobs.front().token);
    else
      r.text = generate(req, digest);
  }
  r.usage.completion_tokens = static_cast<int>(split_words(r.text).size());
  --in_flight_;
  return r;
}

std::string MockBackend::generate(const CompletionRequest& req, const std::string& digest) const {
  static const std::regex kMarker(R"(<m:[0-9a-f]{10}>)");
  const std::string prompt = prompt_text(req);

  std::vector<std::string> echoed;
  for (auto it = std::sregex_iterator(prompt.begin(), prompt.end(), kMarker);
       it != std::sregex_iterator(); ++it) {
    std::string m = it->str();
    if (std::find(echoed.begin(), echoed.end(), m) == echoed.end()) echoed.push_back(m);
  }
  if (echoed.size() > max_echo) echoed.erase(echoed.begin(), echoed.end() - static_cast<long>(max_echo));

  std::string out = "<m:" + digest.substr(0, 10) + ">";
  for (const auto& m : echoed) out += " " + m;

  static constexpr char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
  SeededRng rng(derive_seed(seed_, digest));
  const std::size_t words = instructed_words(prompt);
  for (std::size_t w = 0; w < words; ++w) {
    out.push_back(' ');
    for (int c = 0; c < 3; ++c) out.push_back(kLetters[rng.below(26)]);
  }
  return truncate_to_tokens(out, static_cast<std::size_t>(req.options.max_tokens), chars_per_token);
}

std::vector<TokenLogprob> MockBackend::first_token(const CompletionRequest& req,
                                                   const std::string& digest) const {
  std::vector<TokenLogprob> top;
  switch (behavior_.kind) {
    case MockBehavior::Kind::kOracleYes: {
      const bool positive = oracle_truth(behavior_, req);
      const double p = behavior_.oracle_p;
      std::string right = positive ? "yes" : "no";
      std::string wrong = positive ? "no" : "yes";
      if (p > 0) top.push_back({right, safe_log(p)});
      if (p < 1) top.push_back({wrong, safe_log(1 - p)});
      break;
    }
    case MockBehavior::Kind::kUniformLogprob:
      top.push_back({"yes", -behavior_.uniform_cost});
      top.push_back({"no", -behavior_.uniform_cost});
      break;
    case MockBehavior::Kind::kHashText: {
      SeededRng rng(derive_seed(seed_, "first-token/" + digest));
      const double p_yes = 0.02 + 0.96 * rng.unit();
      // Casing/whitespace variants, as real tokenizers emit them.
      top.push_back({"Yes", std::log(0.7 * p_yes)});
      top.push_back({" yes", std::log(0.3 * p_yes)});
      top.push_back({"no", std::log(1 - p_yes)});
      std::stable_sort(top.begin(), top.end(),
                       [](const auto& a, const auto& b) { return a.logprob > b.logprob; });
      break;
    }
  }
  return top;
}

std::vector<double> MockBackend::score_tokens(const CompletionRequest& req,
                                              const std::string& digest) const {
  const std::string& completion = *req.options.teacher_forced_completion;
  std::vector<std::string> prefix;
  if (req.options.loss_span == LossSpan::kFull) prefix = split_words(prompt_text(req));
  const std::vector<std::string> tail = split_words(completion);

  std::vector<double> out;
  SeededRng rng(derive_seed(seed_, "score/" + digest));
  auto hashed = [&] { return -(0.05 + 2.0 * rng.unit()); };

  switch (behavior_.kind) {
    case MockBehavior::Kind::kUniformLogprob:
      out.assign(prefix.size() + tail.size(), -behavior_.uniform_cost);
      break;
    case MockBehavior::Kind::kOracleYes: {
      out.assign(prefix.size(), 0.0);
      const std::string truth = oracle_truth(behavior_, req) ? "yes" : "no";
      for (const auto& tok : tail) {
        const bool right = to_lower(trim(tok)) == truth;
        out.push_back(safe_log(right ? behavior_.oracle_p : 1 - behavior_.oracle_p));
      }
      break;
    }
    case MockBehavior::Kind::kHashText:
      for (std::size_t i = 0; i < prefix.size() + tail.size(); ++i) out.push_back(hashed());
      break;
  }
  return out;
}

std::shared_ptr<MockBackend> mock_backend(std::uint64_t seed, MockBehavior behavior) {
  return std::make_shared<MockBackend>(seed, std::move(behavior));
}

}  // namespace msr::gateway
