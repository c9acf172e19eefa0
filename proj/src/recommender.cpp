#include "msr/recommender.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace msr::recommender {

using gateway::CompletionRequest;
using gateway::Role;
using gateway::Speaker;

std::string to_string(ExtractionPolicy policy) {
  return policy == ExtractionPolicy::kError ? "error" : "neutral";
}

ExtractionPolicy extraction_policy_from_string(const std::string& name) {
  if (name == "error") return ExtractionPolicy::kError;
  if (name == "neutral") return ExtractionPolicy::kNeutral;
  throw ConfigError("unknown extraction policy '" + name + "' (expected error|neutral)");
}

YesNoMass extract_yes_no(std::span<const gateway::TokenLogprob> top, ExtractionPolicy policy) {
  if (top.empty()) throw ExtractionError("first-token log-probability list is empty");
  YesNoMass out;
  double best_yes = -1, best_no = -1;
  for (const auto& t : top) {
    const std::string norm = to_lower(trim(t.token));
    const double mass = std::exp(t.logprob);
    if (norm == "yes") {
      out.p_yes_raw += mass;
      if (mass > best_yes) best_yes = mass, out.matched_yes_token = t.token;
    } else if (norm == "no") {
      out.p_no_raw += mass;
      if (mass > best_no) best_no = mass, out.matched_no_token = t.token;
    }
  }
  const bool has_yes = best_yes >= 0, has_no = best_no >= 0;
  if (!has_yes && !has_no && policy == ExtractionPolicy::kError)
    throw ExtractionError("neither \"yes\" nor \"no\" among the first-token candidates");
  if (!has_yes) out.p_yes_raw = kPolarityFloor;
  if (!has_no) out.p_no_raw = kPolarityFloor;
  out.floor_applied = !has_yes || !has_no;
  return out;
}

double interaction_probability(double p_yes_raw, double p_no_raw) {
  if (!(p_yes_raw >= 0) || !(p_no_raw >= 0) || p_yes_raw + p_no_raw <= 0)
    throw InputError("yes/no masses must be non-negative with a positive sum");
  // Extended precision keeps the sum exact, so the quotient rounds correctly (0.6/0.8 gives 0.75).
  const long double y = p_yes_raw, n = p_no_raw;
  return static_cast<double>(y / (y + n));
}

std::vector<ScoredCandidate> rank(std::vector<ScoredCandidate> scored) {
  std::sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.p != b.p) return a.p > b.p;
    return a.item_id < b.item_id;
  });
  return scored;
}

std::vector<gateway::Message> RecPrompt::messages() const {
  return {{Speaker::kSystem, system_instruction},
          {Speaker::kUser, user_text + "\n\n" + constrained_output_note}};
}

Recommender::Recommender(gateway::Gateway& gateway, prompts::TemplateSet templates,
                         RecommenderOptions options)
    : gateway_(gateway), templates_(std::move(templates)), options_(options) {
  if (options_.top_logprobs < 1) throw ConfigError("top_logprobs must be >= 1 for scoring");
}

RecPrompt Recommender::build_prompt(const std::string& preference, const catalog::Item& candidate,
                                    bool with_image) const {
  const double cpt = gateway_.chars_per_token();
  RecPrompt p;
  p.system_instruction = templates_.recommend_system;

  auto total = [&](const std::string& pref, const std::string& desc) {
    p.user_text = prompts::render(templates_.recommend,
                                  {{"preference", pref}, {"candidate_description", desc}});
    std::size_t n = 0;
    for (const auto& m : p.messages()) n += estimate_tokens(m.text, cpt);
    return n;
  };
  const std::size_t cap = options_.max_prompt_tokens;
  std::string pref = preference, desc = candidate.description;
  if (total(pref, desc) > cap) {
    const std::size_t overhead = total("", "");
    if (overhead >= cap) throw ConfigError("recommend template alone exceeds max_prompt_tokens");
    const std::size_t room = cap - overhead;
    // Candidate text gets at most a third of the room; preference keeps the rest.
    desc = truncate_to_tokens(desc, std::max<std::size_t>(1, room / 3), cpt);
    pref = truncate_to_tokens(pref, room - std::min(room, estimate_tokens(desc, cpt)) , cpt);
    while (total(pref, desc) > cap && !pref.empty())
      pref = truncate_to_tokens(pref, estimate_tokens(pref, cpt) - 1, cpt);
  }

  if (with_image && options_.attach_images && candidate.image_ref) {
    try {
      p.image = gateway::load_image(*candidate.image_ref, candidate.item_id);
    } catch (const ImageError& e) {
      spdlog::warn("scoring without image: {}", e.what());
    }
  }
  return p;
}

ScoredCandidate Recommender::score(const std::string& user_id, const std::string& preference,
                                   const catalog::Item& candidate) const {
  if (candidate.description.empty())
    throw InputError("candidate " + candidate.item_id + " has no description");
  RecPrompt prompt = build_prompt(preference, candidate);
  CompletionRequest req;
  req.role = Role::kRecommenderMllm;
  req.messages = prompt.messages();
  if (prompt.image) req.images.push_back(*prompt.image);
  req.options.max_tokens = 1;
  req.options.temperature = options_.temperature;
  req.options.top_logprobs = options_.top_logprobs;
  req.probe = gateway::probe_key(user_id, candidate.item_id);

  auto result = gateway_.complete(req);
  YesNoMass mass = extract_yes_no(result.first_token_logprobs, options_.policy);

  ScoredCandidate out;
  out.item_id = candidate.item_id;
  out.p_yes_raw = mass.p_yes_raw;
  out.p_no_raw = mass.p_no_raw;
  out.p = interaction_probability(mass.p_yes_raw, mass.p_no_raw);
  out.diagnostics = {mass.matched_yes_token, mass.matched_no_token, mass.floor_applied,
                     prompt.image.has_value()};
  return out;
}

std::vector<ScoredCandidate> Recommender::rank_candidates(
    const std::string& user_id, const std::string& preference,
    const std::vector<const catalog::Item*>& candidates) const {
  if (candidates.empty()) throw InputError("no candidates to rank");
  std::vector<ScoredCandidate> scored(candidates.size());
  parallel_for(candidates.size(), gateway_.max_in_flight(Role::kRecommenderMllm),
               [&](std::size_t i) { scored[i] = score(user_id, preference, *candidates[i]); });
  return rank(std::move(scored));
}

json to_json(const ScoredCandidate& s) {
  return json{{"item_id", s.item_id},
              {"p", s.p},
              {"p_yes_raw", s.p_yes_raw},
              {"p_no_raw", s.p_no_raw},
              {"diagnostics",
               {{"matched_yes_token", s.diagnostics.matched_yes_token},
                {"matched_no_token", s.diagnostics.matched_no_token},
                {"floor_applied", s.diagnostics.floor_applied},
                {"image_attached", s.diagnostics.image_attached}}}};
}

ScoredCandidate scored_from_json(const json& r) {
  ScoredCandidate s;
  s.item_id = r.at("item_id").get<std::string>();
  s.p = r.at("p").get<double>();
  s.p_yes_raw = r.value("p_yes_raw", 0.0);
  s.p_no_raw = r.value("p_no_raw", 0.0);
  if (auto d = r.find("diagnostics"); d != r.end()) {
    s.diagnostics.matched_yes_token = d->value("matched_yes_token", std::string{});
    s.diagnostics.matched_no_token = d->value("matched_no_token", std::string{});
    s.diagnostics.floor_applied = d->value("floor_applied", false);
    s.diagnostics.image_attached = d->value("image_attached", false);
  }
  return s;
}

}  // namespace msr::recommender
