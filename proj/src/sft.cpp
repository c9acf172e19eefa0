#include "msr/sft.hpp"

#include <algorithm>
#include <set>

namespace msr::sft {

using gateway::Speaker;

std::string to_string(Label label) { return label == Label::kYes ? "yes" : "no"; }

Label label_from_string(const std::string& text) {
  if (text == "yes") return Label::kYes;
  if (text == "no") return Label::kNo;
  throw InputError("label must be \"yes\" or \"no\", got \"" + text + "\"");
}

namespace {

SftExample make_example(const std::string& user, const catalog::Item& item, bool negative, int fold,
                        const std::string& preference,
                        const recommender::Recommender& prompt_builder) {
  auto prompt = prompt_builder.build_prompt(preference, item, /*with_image=*/false);
  SftExample ex;
  ex.id = "f" + std::to_string(fold) + "/" + user + "/" + item.item_id;
  for (const auto& m : prompt.messages()) ex.conversation.push_back({gateway::to_string(m.speaker), m.text});
  ex.label = negative ? Label::kNo : Label::kYes;
  ex.conversation.push_back({"assistant", to_string(ex.label)});
  if (item.image_ref) ex.images.push_back(*item.image_ref);
  ex.provenance = {user, item.item_id, fold, negative};
  return ex;
}

Speaker speaker_from(const std::string& role) {
  if (role == "system") return Speaker::kSystem;
  if (role == "user") return Speaker::kUser;
  if (role == "assistant") return Speaker::kAssistant;
  throw InputError("unknown conversation role '" + role + "'");
}

}  // namespace

SftDataset build_sft_dataset(const std::vector<catalog::Split>& splits,
                             const std::map<std::string, std::string>& preferences,
                             const catalog::Catalog& catalog,
                             const recommender::Recommender& prompt_builder,
                             std::size_t train_ratio, std::uint64_t seed, int fold) {
  SftDataset ds;
  ds.meta.train_ratio = train_ratio;
  ds.meta.seed = seed;
  ds.meta.fold = fold;

  std::vector<const catalog::Split*> training;
  for (const auto& s : splits)
    if (s.fold != fold) training.push_back(&s);
  std::sort(training.begin(), training.end(),
            [](const auto* a, const auto* b) { return a->user_id < b->user_id; });

  for (const auto* s : training) {
    auto pref = preferences.find(s->user_id);
    if (pref == preferences.end())
      throw DependencyError("no inferred preference for training user " + s->user_id);
    ds.examples.push_back(make_example(s->user_id, catalog.item(s->target), false, fold,
                                       pref->second, prompt_builder));
    std::set<std::string> excluded = catalog.interacted(s->user_id);
    excluded.insert(s->history.begin(), s->history.end());
    excluded.insert(s->target);
    auto negatives = catalog::sample_negatives(excluded, catalog, train_ratio,
                                               catalog::negative_seed(seed, "train", s->user_id));
    for (const auto& n : negatives)
      ds.examples.push_back(make_example(s->user_id, catalog.item(n), true, fold, pref->second,
                                         prompt_builder));
  }
  SeededRng rng(derive_seed(seed, "sft/shuffle/" + std::to_string(fold)));
  rng.shuffle(ds.examples);
  return ds;
}

std::string serialize(const SftDataset& ds) {
  const auto& h = ds.meta.recommended_hyperparams;
  std::vector<json> lines;
  lines.push_back({{"schema_version", ds.meta.schema_version},
                   {"train_ratio", ds.meta.train_ratio},
                   {"seed", ds.meta.seed},
                   {"fold", ds.meta.fold},
                   {"recommended_hyperparams",
                    {{"lora_rank", h.lora_rank},
                     {"learning_rate", h.learning_rate},
                     {"batch_size", h.batch_size},
                     {"gradient_accumulation_steps", h.gradient_accumulation_steps},
                     {"epochs", h.epochs},
                     {"max_token_length", h.max_token_length}}}});
  for (const auto& ex : ds.examples) {
    json conv = json::array();
    for (const auto& t : ex.conversation) conv.push_back({{"role", t.role}, {"text", t.text}});
    lines.push_back({{"id", ex.id},
                     {"conversation", conv},
                     {"images", ex.images},
                     {"label", to_string(ex.label)},
                     {"provenance",
                      {{"user_id", ex.provenance.user_id},
                       {"item_id", ex.provenance.item_id},
                       {"fold", ex.provenance.fold},
                       {"is_negative", ex.provenance.is_negative}}}});
  }
  return to_jsonl(lines);
}

SftDataset parse_dataset(const std::filesystem::path& path) {
  SftDataset ds;
  bool header = true;
  read_jsonl(path, [&](std::size_t line, const json& r) {
    try {
      if (header) {
        header = false;
        ds.meta.schema_version = r.at("schema_version").get<int>();
        if (ds.meta.schema_version != kSchemaVersion)
          throw InputError("unsupported schema_version " + std::to_string(ds.meta.schema_version));
        ds.meta.train_ratio = r.at("train_ratio").get<std::size_t>();
        ds.meta.seed = r.at("seed").get<std::uint64_t>();
        ds.meta.fold = r.value("fold", 0);
        return;
      }
      SftExample ex;
      ex.id = r.at("id").get<std::string>();
      for (const auto& t : r.at("conversation"))
        ex.conversation.push_back({t.at("role").get<std::string>(), t.at("text").get<std::string>()});
      ex.images = r.at("images").get<std::vector<std::string>>();
      ex.label = label_from_string(r.at("label").get<std::string>());
      const auto& p = r.at("provenance");
      ex.provenance = {p.at("user_id").get<std::string>(), p.at("item_id").get<std::string>(),
                       p.at("fold").get<int>(), p.at("is_negative").get<bool>()};
      if (ex.conversation.empty() || ex.conversation.back().role != "assistant" ||
          ex.conversation.back().text != to_string(ex.label))
        throw InputError("assistant turn must equal the label");
      ds.examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  if (header) throw InputError(path.string() + ": missing metadata header");
  return ds;
}

LossReport eval_sft_loss(const std::vector<SftExample>& examples, gateway::Gateway& gateway,
                         gateway::LossSpan span) {
  std::vector<const SftExample*> order;
  for (const auto& ex : examples) order.push_back(&ex);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

  LossReport report;
  report.per_example.resize(order.size());
  report.token_counts.resize(order.size());
  parallel_for(order.size(), gateway.max_in_flight(gateway::Role::kRecommenderMllm), [&](std::size_t i) {
    const SftExample& ex = *order[i];
    if (ex.conversation.empty() || ex.conversation.back().role != "assistant")
      throw InputError("example " + ex.id + " has no assistant turn");
    gateway::CompletionRequest req;
    req.role = gateway::Role::kRecommenderMllm;
    for (std::size_t t = 0; t + 1 < ex.conversation.size(); ++t)
      req.messages.push_back({speaker_from(ex.conversation[t].role), ex.conversation[t].text});
    for (const auto& path : ex.images) req.images.push_back(gateway::load_image(path, ex.provenance.item_id));
    req.options.max_tokens = 1;
    req.options.teacher_forced_completion = ex.conversation.back().text;
    req.options.loss_span = span;
    req.probe = gateway::probe_key(ex.provenance.user_id, ex.provenance.item_id);
    auto result = gateway.teacher_forced_logprobs(req);
    double loss = 0;
    for (double lp : *result.token_logprobs) loss -= lp;
    report.per_example[i] = {ex.id, loss};
    report.token_counts[i] = result.token_logprobs->size();
  });
  double total = 0;
  for (const auto& [_, l] : report.per_example) total += l;
  report.mean = order.empty() ? 0.0 : total / static_cast<double>(order.size());
  return report;
}

json to_json(const LossReport& r) {
  json per = json::array();
  for (std::size_t i = 0; i < r.per_example.size(); ++i)
    per.push_back({{"id", r.per_example[i].first},
                   {"loss", r.per_example[i].second},
                   {"tokens", r.token_counts[i]}});
  return json{{"mean_loss", r.mean}, {"examples", r.per_example.size()}, {"per_example", per}};
}

}  // namespace msr::sft
