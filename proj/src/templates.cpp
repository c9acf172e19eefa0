#include "msr/templates.hpp"

#include <cctype>

#include "msr/error.hpp"
#include "msr/util.hpp"

namespace msr::prompts {

namespace fs = std::filesystem;

namespace {

struct Slot {
  const char* file;
  std::string TemplateSet::*field;
};

constexpr Slot kSlots[] = {
    {"text_summary.txt", &TemplateSet::text_summary},
    {"image_description.txt", &TemplateSet::image_description},
    {"fusion.txt", &TemplateSet::fusion},
    {"single_call.txt", &TemplateSet::single_call},
    {"initial_preference.txt", &TemplateSet::initial_preference},
    {"update_preference.txt", &TemplateSet::update_preference},
    {"direct_preference.txt", &TemplateSet::direct_preference},
    {"compress_preference.txt", &TemplateSet::compress_preference},
    {"recommend_system.txt", &TemplateSet::recommend_system},
    {"recommend.txt", &TemplateSet::recommend},
};

}  // namespace

TemplateSet TemplateSet::defaults() {
  TemplateSet t;
  t.text_summary =
      "Summarize the following item description in about {target_words} words. "
      "Say what the item is, its key attributes, and what kind of person it would appeal to.\n\n"
      "Description:\n{description}";
  t.image_description =
      "Please describe the attached image of an item in about {target_words} words. "
      "Cover what is shown, its style and colors, and the overall impression it gives.";
  t.fusion =
      "Below are a text summary and an image description of the same item. Merge them into "
      "one item profile of about {target_words} words that keeps the details useful for "
      "recommendation.\n\nText summary:\n{text_summary}\n\nImage description:\n{image_description}";
  t.single_call =
      "Describe this item in about {target_words} words using both its description and the "
      "attached image.\n\nDescription:\n{description}";
  t.initial_preference =
      "Here is a chronological list of items a user interacted with:\n{item_summaries}\n\n"
      "Summarize the user's initial interests in at most {summary_length} words.";
  t.update_preference =
      "Previously inferred preferences of the user:\n{previous_preference}\n\n"
      "Afterwards the user interacted with these items, in chronological order:\n"
      "{item_summaries}\n\n"
      "Update the preference summary so it reflects the earlier interests together with the "
      "new interactions. Use at most {summary_length} words.";
  t.direct_preference =
      "Here is the complete chronological list of items a user interacted with:\n"
      "{item_summaries}\n\nSummarize the user's preferences in at most {summary_length} words.";
  t.compress_preference =
      "Condense this description of a user's preferences, keeping the most recent and most "
      "distinctive interests. Use at most {summary_length} words.\n\n{previous_preference}";
  t.recommend_system =
      "You are a recommender system. Given a summary of a user's preferences and a candidate "
      "item, predict whether the user will interact with the item.";
  t.recommend =
      "User preferences:\n{preference}\n\nCandidate item:\n{candidate_description}";
  return t;
}

TemplateSet TemplateSet::load(const std::optional<fs::path>& dir) {
  TemplateSet t = defaults();
  if (!dir) return t;
  if (!fs::is_directory(*dir)) throw ConfigError("template directory not found: " + dir->string());
  for (const auto& slot : kSlots) {
    fs::path p = *dir / slot.file;
    if (fs::exists(p)) t.*slot.field = read_file(p);
  }
  return t;
}

void TemplateSet::save(const fs::path& dir) const {
  fs::create_directories(dir);
  for (const auto& slot : kSlots) write_file_atomic(dir / slot.file, this->*slot.field);
}

std::string TemplateSet::fingerprint() const {
  std::string all;
  for (const auto& slot : kSlots) {
    all += slot.file;
    all.push_back('\0');
    all += this->*slot.field;
    all.push_back('\0');
  }
  return sha256_hex(all);
}

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      std::size_t j = i + 1;
      while (j < tmpl.size() && (std::islower(static_cast<unsigned char>(tmpl[j])) || tmpl[j] == '_'))
        ++j;
      if (j < tmpl.size() && tmpl[j] == '}' && j > i + 1) {
        std::string name(tmpl.substr(i + 1, j - i - 1));
        auto it = values.find(name);
        if (it == values.end()) throw ConfigError("template placeholder {" + name + "} has no value");
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

}  // namespace msr::prompts
