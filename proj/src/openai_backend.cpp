#include "msr/openai_backend.hpp"

#include <cstdlib>

#include "httplib.h"

namespace msr::gateway {

namespace {

json message_content(const Message& m, const std::vector<ImagePayload>& images) {
  if (images.empty()) return m.text;
  json parts = json::array();
  parts.push_back({{"type", "text"}, {"text", m.text}});
  for (const auto& img : images) {
    std::string url = "data:" + img.mime + ";base64," +
                      base64_encode(std::span<const std::uint8_t>(img.bytes));
    parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  return parts;
}

// Per-token logprobs for the trailing tokens whose decoded text spells the
// completion.
std::vector<double> completion_tail(const json& prompt_logprobs, const std::string& completion) {
  std::vector<std::pair<std::string, double>> tokens;
  for (const auto& entry : prompt_logprobs) {
    if (entry.is_null() || entry.empty()) continue;
    const auto& first = entry.begin().value();
    tokens.emplace_back(first.value("decoded_token", std::string{}), first.at("logprob").get<double>());
  }
  const std::string want = trim(completion);
  std::string suffix;
  for (std::size_t n = 1; n <= tokens.size(); ++n) {
    suffix = tokens[tokens.size() - n].first + suffix;
    if (trim(suffix) == want) {
      std::vector<double> out;
      for (std::size_t i = tokens.size() - n; i < tokens.size(); ++i) out.push_back(tokens[i].second);
      return out;
    }
    if (suffix.size() > completion.size() + 16) break;
  }
  throw CapabilityError("could not align prompt_logprobs with the forced completion");
}

}  // namespace

OpenAiBackend::OpenAiBackend(HttpBackendConfig config) : config_(std::move(config)) {
  const std::string& url = config_.base_url;
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("base_url needs a scheme: " + url);
  auto path_start = url.find('/', scheme + 3);
  host_ = url.substr(0, path_start);
  if (path_start != std::string::npos) path_prefix_ = url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

json build_chat_payload(const CompletionRequest& req, const std::string& model) {
  std::size_t last_user = req.messages.size();
  for (std::size_t i = 0; i < req.messages.size(); ++i)
    if (req.messages[i].speaker == Speaker::kUser) last_user = i;

  json messages = json::array();
  for (std::size_t i = 0; i < req.messages.size(); ++i) {
    const auto& m = req.messages[i];
    static const std::vector<ImagePayload> kNone;
    messages.push_back({{"role", to_string(m.speaker)},
                        {"content", message_content(m, i == last_user ? req.images : kNone)}});
  }
  const auto& o = req.options;
  json payload{{"model", model}, {"temperature", o.temperature}};
  if (o.teacher_forced_completion) {
    messages.push_back({{"role", "assistant"}, {"content", *o.teacher_forced_completion}});
    payload["max_tokens"] = 1;
    payload["echo"] = true;
    payload["add_generation_prompt"] = false;
    payload["continue_final_message"] = true;
    payload["prompt_logprobs"] = 0;
  } else {
    payload["max_tokens"] = o.max_tokens;
    if (o.top_logprobs > 0) {
      payload["logprobs"] = true;
      payload["top_logprobs"] = o.top_logprobs;
    }
  }
  payload["messages"] = std::move(messages);
  return payload;
}

CompletionResult parse_chat_response(const json& body, const CompletionRequest& req) {
  CompletionResult r;
  try {
    const auto& choice = body.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    r.text = content.is_string() ? content.get<std::string>() : std::string{};
    if (auto lp = choice.find("logprobs"); lp != choice.end() && !lp->is_null()) {
      const auto& tokens = lp->at("content");
      if (!tokens.empty()) {
        for (const auto& t : tokens.at(0).at("top_logprobs"))
          r.first_token_logprobs.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
      }
    }
    if (auto u = body.find("usage"); u != body.end() && !u->is_null()) {
      r.usage.prompt_tokens = u->value("prompt_tokens", 0);
      r.usage.completion_tokens = u->value("completion_tokens", 0);
    }
    if (req.options.teacher_forced_completion) {
      auto pl = body.find("prompt_logprobs");
      if (pl == body.end() || pl->is_null())
        throw CapabilityError("backend response lacks prompt_logprobs");
      if (req.options.loss_span == LossSpan::kFull) {
        std::vector<double> all;
        for (const auto& entry : *pl)
          if (!entry.is_null() && !entry.empty()) all.push_back(entry.begin().value().at("logprob").get<double>());
        r.token_logprobs = std::move(all);
      } else {
        r.token_logprobs = completion_tail(*pl, *req.options.teacher_forced_completion);
      }
      r.text = *req.options.teacher_forced_completion;
    }
  } catch (const json::exception& e) {
    throw TransportError(std::string("unexpected chat-completions response: ") + e.what());
  }
  return r;
}

CompletionResult OpenAiBackend::complete(const CompletionRequest& req) {
  httplib::Client client(host_);
  client.set_connection_timeout(10);
  client.set_read_timeout(static_cast<time_t>(config_.timeout.count()));
  httplib::Headers headers;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = build_chat_payload(req, config_.model).dump();
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
  if (!res) throw TransientError(config_.name + ": " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransientError(config_.name + ": HTTP " + std::to_string(res->status));
  if (res->status == 401 || res->status == 403)
    throw TransportError(config_.name + ": authentication failed (HTTP " +
                         std::to_string(res->status) + ")");
  if (res->status != 200)
    throw TransportError(config_.name + ": HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 300));
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw TransportError(config_.name + ": response is not JSON: " + e.what());
  }
  return parse_chat_response(parsed, req);
}

}  // namespace msr::gateway
