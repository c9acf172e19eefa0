#include "msr/item_summarizer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace msr::items {

using gateway::CompletionRequest;
using gateway::Message;
using gateway::Role;
using gateway::Speaker;

std::string to_string(SummaryMode mode) {
  return mode == SummaryMode::kFull ? "full" : "text_only";
}

SummaryMode summary_mode_from_string(const std::string& name) {
  if (name == "full") return SummaryMode::kFull;
  if (name == "text_only") return SummaryMode::kTextOnly;
  throw ConfigError("unknown summarize mode '" + name + "' (expected full|text_only)");
}

double length_gap(const std::string& a, const std::string& b) {
  const double na = static_cast<double>(word_count(a));
  const double nb = static_cast<double>(word_count(b));
  const double hi = std::max(na, nb);
  return hi == 0 ? 0.0 : std::abs(na - nb) / hi;
}

ItemSummarizer::ItemSummarizer(gateway::Gateway& gateway, prompts::TemplateSet templates,
                               SummarizerOptions options)
    : gateway_(gateway), templates_(std::move(templates)), options_(options) {}

gateway::CompletionResult ItemSummarizer::call(const catalog::Item& item,
                                               CompletionRequest request) const {
  try {
    return gateway_.complete(request);
  } catch (const Error& e) {
    throw Error(e.kind(), "item " + item.item_id + ": " + e.what());
  }
}

CompletionRequest ItemSummarizer::text_request(const catalog::Item& item) const {
  CompletionRequest req;
  req.role = Role::kItemMllm;
  req.messages.push_back(
      {Speaker::kUser, prompts::render(templates_.text_summary,
                                       {{"description", item.description},
                                        {"target_words", std::to_string(options_.target_words)}})});
  req.options.max_tokens = static_cast<int>(std::min(options_.max_tokens, 2 * options_.target_words));
  req.options.temperature = options_.temperature;
  return req;
}

CompletionRequest ItemSummarizer::image_request(const gateway::ImagePayload& image) const {
  CompletionRequest req;
  req.role = Role::kItemMllm;
  req.messages.push_back(
      {Speaker::kUser, prompts::render(templates_.image_description,
                                       {{"target_words", std::to_string(options_.target_words)}})});
  req.images.push_back(image);
  req.options.max_tokens = static_cast<int>(std::min(options_.max_tokens, 2 * options_.target_words));
  req.options.temperature = options_.temperature;
  return req;
}

std::string ItemSummarizer::summarize_text(const catalog::Item& item) const {
  if (item.description.empty())
    throw InputError("item " + item.item_id + " has an empty description");
  return trim(call(item, text_request(item)).text);
}

std::string ItemSummarizer::describe_image(const catalog::Item& item) const {
  if (!item.image_ref) throw ImageError("item " + item.item_id + " has no image");
  return describe_image(item, gateway::load_image(*item.image_ref, item.item_id));
}

std::string ItemSummarizer::describe_image(const catalog::Item& item,
                                           const gateway::ImagePayload& image) const {
  return trim(call(item, image_request(image)).text);
}

std::string ItemSummarizer::fuse(const catalog::Item& item, const std::string& text_summary,
                                 const std::string& image_description) const {
  if (trim(text_summary).empty() || trim(image_description).empty())
    throw InputError("item " + item.item_id + ": fusion needs both a text summary and an image description");
  CompletionRequest req;
  req.role = Role::kItemMllm;
  req.messages.push_back(
      {Speaker::kUser, prompts::render(templates_.fusion,
                                       {{"text_summary", text_summary},
                                        {"image_description", image_description},
                                        {"target_words", std::to_string(options_.target_words)}})});
  req.options.max_tokens = static_cast<int>(options_.fuse_cap_tokens);
  req.options.temperature = options_.temperature;
  return truncate_to_tokens(trim(call(item, req).text), options_.fuse_cap_tokens,
                            gateway_.chars_per_token());
}

std::string ItemSummarizer::recalibrate(const catalog::Item& item, const CompletionRequest& original,
                                        const std::string& answer) const {
  CompletionRequest req = original;
  req.messages.push_back({Speaker::kAssistant, answer});
  req.messages.push_back(
      {Speaker::kUser, "That answer has " + std::to_string(word_count(answer)) +
                           " words. Rewrite it in about " + std::to_string(options_.target_words) +
                           " words."});
  return trim(call(item, req).text);
}

ItemSummary ItemSummarizer::summarize_item(const catalog::Item& item, SummaryMode mode) const {
  ItemSummary out;
  out.item_id = item.item_id;

  std::optional<gateway::ImagePayload> image;
  if (mode == SummaryMode::kFull) {
    try {
      if (!item.image_ref) throw ImageError("item " + item.item_id + " has no image");
      image = gateway::load_image(*item.image_ref, item.item_id);
    } catch (const ImageError& e) {
      if (options_.missing_image == MissingImagePolicy::kError) throw;
      out.warnings.push_back(std::string("image unavailable, summarized text only: ") + e.what());
      spdlog::warn("{}", out.warnings.back());
    }
  }

  if (!image) {
    out.mode = SummaryMode::kTextOnly;
    out.text_summary = summarize_text(item);
    out.unified_summary = out.text_summary;
    return out;
  }

  out.mode = SummaryMode::kFull;
  if (options_.single_call) {
    CompletionRequest req;
    req.role = Role::kItemMllm;
    req.messages.push_back(
        {Speaker::kUser, prompts::render(templates_.single_call,
                                         {{"description", item.description},
                                          {"target_words", std::to_string(options_.target_words)}})});
    req.images.push_back(*image);
    req.options.max_tokens = static_cast<int>(options_.fuse_cap_tokens);
    req.options.temperature = options_.temperature;
    out.text_summary = truncate_to_tokens(trim(call(item, req).text), options_.fuse_cap_tokens,
                                          gateway_.chars_per_token());
    out.unified_summary = out.text_summary;
    return out;
  }

  out.text_summary = summarize_text(item);
  out.image_description = describe_image(item, *image);

  if (length_gap(out.text_summary, *out.image_description) > options_.length_tolerance) {
    // One corrective re-prompt, aimed at whichever output is farther from target.
    const auto target = static_cast<double>(options_.target_words);
    const double text_off = std::abs(static_cast<double>(word_count(out.text_summary)) - target);
    const double image_off = std::abs(static_cast<double>(word_count(*out.image_description)) - target);
    if (text_off >= image_off)
      out.text_summary = recalibrate(item, text_request(item), out.text_summary);
    else
      out.image_description = recalibrate(item, image_request(*image), *out.image_description);
    if (length_gap(out.text_summary, *out.image_description) > options_.length_tolerance) {
      out.warnings.push_back("text/image lengths still differ by more than the tolerance");
      spdlog::warn("item {}: {}", item.item_id, out.warnings.back());
    }
  }

  out.unified_summary = fuse(item, out.text_summary, *out.image_description);
  return out;
}

std::vector<ItemSummary> ItemSummarizer::summarize_all(const std::vector<const catalog::Item*>& items,
                                                       SummaryMode mode) const {
  std::vector<ItemSummary> out(items.size());
  parallel_for(items.size(), gateway_.max_in_flight(Role::kItemMllm),
               [&](std::size_t i) { out[i] = summarize_item(*items[i], mode); });
  return out;
}

json to_json(const ItemSummary& s) {
  json j{{"item_id", s.item_id},
         {"text_summary", s.text_summary},
         {"unified_summary", s.unified_summary},
         {"mode", to_string(s.mode)},
         {"warnings", s.warnings}};
  j["image_description"] = s.image_description ? json(*s.image_description) : json(nullptr);
  return j;
}

ItemSummary item_summary_from_json(const json& r) {
  ItemSummary s;
  s.item_id = r.at("item_id").get<std::string>();
  s.text_summary = r.at("text_summary").get<std::string>();
  s.unified_summary = r.at("unified_summary").get<std::string>();
  s.mode = summary_mode_from_string(r.at("mode").get<std::string>());
  if (auto it = r.find("image_description"); it != r.end() && it->is_string()) s.image_description = *it;
  if (auto it = r.find("warnings"); it != r.end()) s.warnings = it->get<std::vector<std::string>>();
  return s;
}

void write_summaries(const std::filesystem::path& path, const std::vector<ItemSummary>& summaries) {
  std::map<std::string, json> by_id;
  for (const auto& s : summaries) by_id[s.item_id] = to_json(s);
  std::vector<json> records;
  for (auto& [_, j] : by_id) records.push_back(std::move(j));
  write_file_atomic(path, to_jsonl(records));
}

std::map<std::string, ItemSummary> read_summaries(const std::filesystem::path& path) {
  std::map<std::string, ItemSummary> out;
  read_jsonl(path, [&](std::size_t, const json& r) {
    auto s = item_summary_from_json(r);
    out[s.item_id] = std::move(s);
  });
  return out;
}

}  // namespace msr::items
