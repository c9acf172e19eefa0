#include "msr/preference.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace msr::preference {

using gateway::CompletionRequest;
using gateway::Role;
using gateway::Speaker;

std::string to_string(PreferenceMode mode) {
  return mode == PreferenceMode::kRecurrent ? "recurrent" : "direct";
}

PreferenceMode preference_mode_from_string(const std::string& name) {
  if (name == "recurrent") return PreferenceMode::kRecurrent;
  if (name == "direct") return PreferenceMode::kDirect;
  throw ConfigError("unknown preference mode '" + name + "' (expected recurrent|direct)");
}

std::vector<Block> segment_blocks(const std::vector<std::string>& history, std::size_t block_size) {
  if (history.empty()) throw InputError("cannot segment an empty history");
  if (block_size == 0) throw InputError("block size must be >= 1");
  std::vector<Block> out;
  for (std::size_t start = 0; start < history.size(); start += block_size) {
    auto end = std::min(history.size(), start + block_size);
    out.push_back({out.size(), {history.begin() + static_cast<long>(start),
                                history.begin() + static_cast<long>(end)}});
  }
  return out;
}

namespace {

std::string numbered(const std::vector<std::string>& texts) {
  std::string out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i) out.push_back('\n');
    out += std::to_string(i + 1) + ". " + texts[i];
  }
  return out;
}

}  // namespace

PreferenceEngine::PreferenceEngine(gateway::Gateway& gateway, prompts::TemplateSet templates,
                                   PreferenceOptions options)
    : gateway_(gateway), templates_(std::move(templates)), options_(options) {
  if (options_.block_size == 0) throw ConfigError("block_size must be >= 1");
  if (options_.summary_length == 0) throw ConfigError("summary_length must be >= 1");
}

std::size_t PreferenceEngine::output_budget() const {
  auto words_as_tokens = static_cast<std::size_t>(std::ceil(1.5 * static_cast<double>(options_.summary_length)));
  return std::min(options_.max_prompt_tokens, words_as_tokens);
}

std::vector<std::string> PreferenceEngine::lookup(const std::vector<std::string>& ids,
                                                  const SummaryLookup& summaries) const {
  std::vector<std::string> out;
  for (const auto& id : ids) {
    auto it = summaries.find(id);
    if (it == summaries.end()) throw DependencyError("no item summary for item " + id);
    out.push_back(it->second);
  }
  return out;
}

std::string PreferenceEngine::fit_prompt(const std::string& tmpl,
                                         std::map<std::string, std::string> values,
                                         const std::vector<std::string>& item_texts) const {
  const double cpt = gateway_.chars_per_token();
  values["summary_length"] = std::to_string(options_.summary_length);
  values["item_summaries"] = numbered(item_texts);
  std::string prompt = prompts::render(tmpl, values);
  if (estimate_tokens(prompt, cpt) <= options_.max_prompt_tokens) return prompt;

  values["item_summaries"] = numbered(std::vector<std::string>(item_texts.size()));
  const std::size_t overhead = estimate_tokens(prompts::render(tmpl, values), cpt);
  if (overhead >= options_.max_prompt_tokens)
    throw ConfigError("preference template alone exceeds max_prompt_tokens");
  std::size_t per_item = (options_.max_prompt_tokens - overhead) / std::max<std::size_t>(1, item_texts.size());
  spdlog::debug("preference prompt over budget; trimming {} item summaries to ~{} tokens each",
               item_texts.size(), per_item);
  for (; per_item > 0; --per_item) {
    std::vector<std::string> cut;
    for (const auto& t : item_texts) cut.push_back(truncate_to_tokens(t, per_item, cpt));
    values["item_summaries"] = numbered(cut);
    prompt = prompts::render(tmpl, values);
    if (estimate_tokens(prompt, cpt) <= options_.max_prompt_tokens) return prompt;
  }
  throw ConfigError("cannot fit preference prompt within max_prompt_tokens");
}

std::string PreferenceEngine::generate(const std::string& prompt) const {
  CompletionRequest req;
  req.role = Role::kPreferenceLlm;
  req.messages.push_back({Speaker::kUser, prompt});
  req.options.max_tokens = static_cast<int>(output_budget());
  req.options.temperature = options_.temperature;
  std::string text = trim(gateway_.complete(req).text);
  if (text.empty()) throw TransportError("preference backend returned an empty summary");
  return truncate_to_tokens(text, output_budget(), gateway_.chars_per_token());
}

std::string PreferenceEngine::compress(const std::string& summary) const {
  const std::size_t target = std::max<std::size_t>(1, options_.summary_length / 2);
  std::map<std::string, std::string> values{{"previous_preference", summary},
                                            {"summary_length", std::to_string(target)}};
  std::string prompt = prompts::render(templates_.compress_preference, values);
  const double cpt = gateway_.chars_per_token();
  if (estimate_tokens(prompt, cpt) > options_.max_prompt_tokens) {
    values["previous_preference"] = "";
    std::size_t overhead = estimate_tokens(prompts::render(templates_.compress_preference, values), cpt);
    values["previous_preference"] =
        truncate_to_tokens(summary, options_.max_prompt_tokens - std::min(overhead, options_.max_prompt_tokens), cpt);
    prompt = prompts::render(templates_.compress_preference, values);
  }
  return truncate_to_tokens(generate(prompt), std::max<std::size_t>(1, output_budget() / 2), cpt);
}

PreferenceState PreferenceEngine::make_state(const std::string& user_id, std::size_t block_index,
                                             std::string summary, std::size_t compressions) const {
  PreferenceState s;
  s.user_id = user_id;
  s.block_index = block_index;
  s.estimated_tokens = estimate_tokens(summary, gateway_.chars_per_token());
  s.summary = std::move(summary);
  s.compressions = compressions;
  return s;
}

PreferenceState PreferenceEngine::infer_initial(const std::string& user_id, const Block& block,
                                                const SummaryLookup& summaries) const {
  if (block.index != 0) throw SequencingError("initial inference needs block 0, got block " + std::to_string(block.index));
  if (block.item_ids.empty()) throw InputError("empty block");
  auto texts = lookup(block.item_ids, summaries);
  std::string prompt = fit_prompt(templates_.initial_preference, {}, texts);
  return make_state(user_id, 0, generate(prompt), 0);
}

PreferenceState PreferenceEngine::infer_update(const PreferenceState& prev, const Block& block,
                                               const SummaryLookup& summaries) const {
  if (block.index != prev.block_index + 1)
    throw SequencingError("user " + prev.user_id + ": block " + std::to_string(block.index) +
                          " cannot follow block " + std::to_string(prev.block_index));
  if (block.item_ids.empty()) throw InputError("empty block");
  auto texts = lookup(block.item_ids, summaries);
  const double cpt = gateway_.chars_per_token();

  std::string previous = prev.summary;
  std::size_t compressions = prev.compressions;
  std::map<std::string, std::string> values{{"previous_preference", previous},
                                            {"item_summaries", numbered(texts)},
                                            {"summary_length", std::to_string(options_.summary_length)}};
  if (estimate_tokens(prompts::render(templates_.update_preference, values), cpt) >
      options_.max_prompt_tokens) {
    spdlog::debug("user {}: update prompt for block {} exceeds {} tokens; compressing previous summary",
                 prev.user_id, block.index, options_.max_prompt_tokens);
    previous = compress(previous);
    ++compressions;
    previous = truncate_to_tokens(previous, options_.max_prompt_tokens / 2, cpt);
  }
  std::string prompt = fit_prompt(templates_.update_preference, {{"previous_preference", previous}}, texts);
  return make_state(prev.user_id, block.index, generate(prompt), compressions);
}

PreferenceState PreferenceEngine::infer_direct(const std::string& user_id,
                                               const std::vector<std::string>& history,
                                               const SummaryLookup& summaries) const {
  if (history.empty()) throw InputError("cannot infer preferences from an empty history");
  auto texts = lookup(history, summaries);
  std::string prompt = fit_prompt(templates_.direct_preference, {}, texts);
  return make_state(user_id, 0, generate(prompt), 0);
}

PreferenceState PreferenceEngine::infer_preference(const std::string& user_id,
                                                   const std::vector<std::string>& history,
                                                   PreferenceMode mode,
                                                   const SummaryLookup& summaries) const {
  if (mode == PreferenceMode::kDirect) return infer_direct(user_id, history, summaries);
  auto blocks = segment_blocks(history, options_.block_size);
  PreferenceState state = infer_initial(user_id, blocks.front(), summaries);
  for (std::size_t i = 1; i < blocks.size(); ++i) state = infer_update(state, blocks[i], summaries);
  return state;
}

json to_json(const PreferenceState& s) {
  return json{{"user_id", s.user_id},
              {"block_index", s.block_index},
              {"summary", s.summary},
              {"estimated_tokens", s.estimated_tokens},
              {"compressions", s.compressions}};
}

PreferenceState preference_from_json(const json& r) {
  PreferenceState s;
  s.user_id = r.at("user_id").get<std::string>();
  s.block_index = r.at("block_index").get<std::size_t>();
  s.summary = r.at("summary").get<std::string>();
  s.estimated_tokens = r.value("estimated_tokens", std::size_t{0});
  s.compressions = r.value("compressions", std::size_t{0});
  return s;
}

void write_preferences(const std::filesystem::path& path, const std::vector<PreferenceState>& states) {
  std::map<std::string, json> by_user;
  for (const auto& s : states) by_user[s.user_id] = to_json(s);
  std::vector<json> records;
  for (auto& [_, j] : by_user) records.push_back(std::move(j));
  write_file_atomic(path, to_jsonl(records));
}

std::map<std::string, PreferenceState> read_preferences(const std::filesystem::path& path) {
  std::map<std::string, PreferenceState> out;
  read_jsonl(path, [&](std::size_t, const json& r) {
    auto s = preference_from_json(r);
    out[s.user_id] = std::move(s);
  });
  return out;
}

}  // namespace msr::preference
