#pragma once

#include <chrono>
#include <string>

#include "msr/gateway.hpp"

namespace msr::gateway {

struct HttpBackendConfig {
  std::string name;          // backend id used in cache paths
  std::string base_url;      // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key_env;   // env var holding the bearer token; may be empty
  Capabilities capabilities;
  std::chrono::seconds timeout{120};
};

/// Chat-completions client speaking the OpenAI wire schema. Images travel
/// as base64 data URLs; first-token scores come from `top_logprobs`.
/// Teacher-forced scoring uses the vLLM extension fields (`echo`,
/// `continue_final_message`, `prompt_logprobs`).
class OpenAiBackend : public Backend {
 public:
  explicit OpenAiBackend(HttpBackendConfig config);

  std::string id() const override { return config_.name; }
  std::string model() const override { return config_.model; }
  Capabilities capabilities() const override { return config_.capabilities; }
  CompletionResult complete(const CompletionRequest& request) override;

 private:
  HttpBackendConfig config_;
  std::string host_;
  std::string path_prefix_;
};

json build_chat_payload(const CompletionRequest& request, const std::string& model);
CompletionResult parse_chat_response(const json& body, const CompletionRequest& request);

}  // namespace msr::gateway
