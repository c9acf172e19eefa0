#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msr/catalog.hpp"
#include "msr/gateway.hpp"
#include "msr/templates.hpp"

namespace msr::recommender {

/// Mass assigned to a polarity absent from the top-K list.
inline constexpr double kPolarityFloor = 1e-6;

enum class ExtractionPolicy { kError, kNeutral };

std::string to_string(ExtractionPolicy policy);
ExtractionPolicy extraction_policy_from_string(const std::string& name);

struct YesNoMass {
  double p_yes_raw = 0;
  double p_no_raw = 0;
  std::string matched_yes_token;  // highest-mass matching variant, empty if floored
  std::string matched_no_token;
  bool floor_applied = false;
};

/// Sums exp(logprob) over tokens whose trimmed lowercase form is "yes"
/// (resp. "no"). A missing polarity is floored; both missing raises
/// ExtractionError under kError and yields (floor, floor) under kNeutral.
YesNoMass extract_yes_no(std::span<const gateway::TokenLogprob> first_token_logprobs,
                         ExtractionPolicy policy);

/// p = p_yes / (p_yes + p_no)
double interaction_probability(double p_yes_raw, double p_no_raw);

struct ScoredCandidate {
  std::string item_id;
  double p_yes_raw = 0;
  double p_no_raw = 0;
  double p = 0;
  struct Diagnostics {
    std::string matched_yes_token;
    std::string matched_no_token;
    bool floor_applied = false;
    bool image_attached = false;
  } diagnostics;
};

/// Sorted by p descending, ties by item_id ascending.
std::vector<ScoredCandidate> rank(std::vector<ScoredCandidate> scored);

inline constexpr const char* kConstrainedOutputNote =
    "Answer with only \"yes\" or \"no\".";

struct RecPrompt {
  std::string system_instruction;
  std::string user_text;  // rendered preference + candidate description
  std::optional<gateway::ImagePayload> image;
  std::string constrained_output_note = kConstrainedOutputNote;

  std::vector<gateway::Message> messages() const;
};

struct RecommenderOptions {
  int top_logprobs = 20;
  ExtractionPolicy policy = ExtractionPolicy::kNeutral;
  bool attach_images = true;
  std::size_t max_prompt_tokens = 512;
  double temperature = 0.0;
};

class Recommender {
 public:
  Recommender(gateway::Gateway& gateway, prompts::TemplateSet templates, RecommenderOptions options);

  /// Trims the candidate description, then the preference, to keep the
  /// prompt estimate within max_prompt_tokens.
  RecPrompt build_prompt(const std::string& preference, const catalog::Item& candidate,
                         bool with_image = true) const;
  ScoredCandidate score(const std::string& user_id, const std::string& preference,
                        const catalog::Item& candidate) const;
  /// Scores each candidate (parallel, bounded by the recommender lane) and ranks.
  std::vector<ScoredCandidate> rank_candidates(const std::string& user_id,
                                               const std::string& preference,
                                               const std::vector<const catalog::Item*>& candidates) const;

  const RecommenderOptions& options() const { return options_; }

 private:
  gateway::Gateway& gateway_;
  prompts::TemplateSet templates_;
  RecommenderOptions options_;
};

json to_json(const ScoredCandidate& scored);
ScoredCandidate scored_from_json(const json& record);

}  // namespace msr::recommender
