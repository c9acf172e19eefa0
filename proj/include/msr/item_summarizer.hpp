#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msr/catalog.hpp"
#include "msr/gateway.hpp"
#include "msr/templates.hpp"

namespace msr::items {

enum class SummaryMode { kFull, kTextOnly };
enum class MissingImagePolicy { kFallback, kError };

std::string to_string(SummaryMode mode);
SummaryMode summary_mode_from_string(const std::string& name);

struct SummarizerOptions {
  std::size_t target_words = 80;
  /// Max relative word-count gap between text summary and image description.
  double length_tolerance = 0.5;
  std::size_t fuse_cap_tokens = 160;
  std::size_t max_tokens = 512;
  bool single_call = false;
  MissingImagePolicy missing_image = MissingImagePolicy::kFallback;
  double temperature = 0.0;
};

struct ItemSummary {
  std::string item_id;
  std::string text_summary;
  std::optional<std::string> image_description;
  std::string unified_summary;
  SummaryMode mode = SummaryMode::kTextOnly;
  std::vector<std::string> warnings;

  bool operator==(const ItemSummary&) const = default;
};

/// |a - b| / max(a, b) over word counts; 0 when both are empty.
double length_gap(const std::string& a, const std::string& b);

/// Three-phase item summarization: text summary and image description are
/// produced independently at the same target length, then fused.
class ItemSummarizer {
 public:
  ItemSummarizer(gateway::Gateway& gateway, prompts::TemplateSet templates,
                 SummarizerOptions options);

  std::string summarize_text(const catalog::Item& item) const;
  std::string describe_image(const catalog::Item& item) const;
  std::string describe_image(const catalog::Item& item, const gateway::ImagePayload& image) const;
  std::string fuse(const catalog::Item& item, const std::string& text_summary,
                   const std::string& image_description) const;
  ItemSummary summarize_item(const catalog::Item& item, SummaryMode mode) const;

  /// Parallel over items, bounded by the item_mllm in-flight limit. Output
  /// order follows the input.
  std::vector<ItemSummary> summarize_all(const std::vector<const catalog::Item*>& items,
                                         SummaryMode mode) const;

  const SummarizerOptions& options() const { return options_; }

 private:
  gateway::CompletionResult call(const catalog::Item& item, gateway::CompletionRequest request) const;
  std::string recalibrate(const catalog::Item& item, const gateway::CompletionRequest& original,
                          const std::string& answer) const;
  gateway::CompletionRequest text_request(const catalog::Item& item) const;
  gateway::CompletionRequest image_request(const gateway::ImagePayload& image) const;

  gateway::Gateway& gateway_;
  prompts::TemplateSet templates_;
  SummarizerOptions options_;
};

json to_json(const ItemSummary& summary);
ItemSummary item_summary_from_json(const json& record);
/// Writes one record per item, sorted by item_id.
void write_summaries(const std::filesystem::path& path, const std::vector<ItemSummary>& summaries);
std::map<std::string, ItemSummary> read_summaries(const std::filesystem::path& path);

}  // namespace msr::items
