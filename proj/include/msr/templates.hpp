#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace msr::prompts {

/// Every prompt the pipeline sends. Defaults are compiled in; any file of
/// the same name in a template directory overrides the default.
struct TemplateSet {
  std::string text_summary;         // text_summary.txt
  std::string image_description;    // image_description.txt
  std::string fusion;               // fusion.txt
  std::string single_call;          // single_call.txt
  std::string initial_preference;   // initial_preference.txt
  std::string update_preference;    // update_preference.txt
  std::string direct_preference;    // direct_preference.txt
  std::string compress_preference;  // compress_preference.txt
  std::string recommend_system;     // recommend_system.txt
  std::string recommend;            // recommend.txt

  static TemplateSet defaults();
  static TemplateSet load(const std::optional<std::filesystem::path>& dir);
  /// Writes every template into `dir` (used to seed an editable copy).
  void save(const std::filesystem::path& dir) const;
  std::string fingerprint() const;
};

/// Substitutes `{name}` placeholders. A placeholder with no value raises
/// ConfigError; values are inserted verbatim (no recursive expansion).
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values);

}  // namespace msr::prompts
