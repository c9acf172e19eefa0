#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msr/gateway.hpp"
#include "msr/templates.hpp"

namespace msr::preference {

enum class PreferenceMode { kRecurrent, kDirect };

std::string to_string(PreferenceMode mode);
PreferenceMode preference_mode_from_string(const std::string& name);

struct Block {
  std::size_t index = 0;
  std::vector<std::string> item_ids;

  bool operator==(const Block&) const = default;
};

/// Fixed-size chronological blocks; only the last may be short.
std::vector<Block> segment_blocks(const std::vector<std::string>& history, std::size_t block_size);

struct PreferenceState {
  std::string user_id;
  std::size_t block_index = 0;
  std::string summary;
  std::size_t estimated_tokens = 0;
  /// Compression calls issued so far to keep prompts within budget.
  std::size_t compressions = 0;

  bool operator==(const PreferenceState&) const = default;
};

struct PreferenceOptions {
  std::size_t block_size = 3;
  /// Output-length budget for a preference summary, in words.
  std::size_t summary_length = 200;
  /// Cap on the estimated token count of every preference prompt.
  std::size_t max_prompt_tokens = 512;
  double temperature = 0.0;
};

/// item_id -> unified item summary
using SummaryLookup = std::map<std::string, std::string>;

class PreferenceEngine {
 public:
  PreferenceEngine(gateway::Gateway& gateway, prompts::TemplateSet templates,
                   PreferenceOptions options);

  PreferenceState infer_initial(const std::string& user_id, const Block& block,
                                const SummaryLookup& summaries) const;
  /// Returns a new state; `prev` is untouched.
  PreferenceState infer_update(const PreferenceState& prev, const Block& block,
                               const SummaryLookup& summaries) const;
  PreferenceState infer_direct(const std::string& user_id, const std::vector<std::string>& history,
                               const SummaryLookup& summaries) const;
  PreferenceState infer_preference(const std::string& user_id,
                                   const std::vector<std::string>& history, PreferenceMode mode,
                                   const SummaryLookup& summaries) const;

  /// Token budget for one generated summary.
  std::size_t output_budget() const;
  const PreferenceOptions& options() const { return options_; }

 private:
  std::vector<std::string> lookup(const std::vector<std::string>& ids,
                                  const SummaryLookup& summaries) const;
  /// Renders a prompt, shrinking item summaries evenly until it fits.
  std::string fit_prompt(const std::string& tmpl, std::map<std::string, std::string> values,
                         const std::vector<std::string>& item_texts) const;
  std::string generate(const std::string& prompt) const;
  std::string compress(const std::string& summary) const;
  PreferenceState make_state(const std::string& user_id, std::size_t block_index,
                             std::string summary, std::size_t compressions) const;

  gateway::Gateway& gateway_;
  prompts::TemplateSet templates_;
  PreferenceOptions options_;
};

json to_json(const PreferenceState& state);
PreferenceState preference_from_json(const json& record);
void write_preferences(const std::filesystem::path& path, const std::vector<PreferenceState>& states);
std::map<std::string, PreferenceState> read_preferences(const std::filesystem::path& path);

}  // namespace msr::preference
