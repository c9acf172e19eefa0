#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "msr/catalog.hpp"
#include "msr/gateway.hpp"
#include "msr/recommender.hpp"

namespace msr::sft {

inline constexpr int kSchemaVersion = 1;

enum class Label { kYes, kNo };

std::string to_string(Label label);
Label label_from_string(const std::string& text);

struct Turn {
  std::string role;  // system | user | assistant
  std::string text;

  bool operator==(const Turn&) const = default;
};

struct Provenance {
  std::string user_id;
  std::string item_id;
  int fold = 0;
  bool is_negative = false;

  bool operator==(const Provenance&) const = default;
};

struct SftExample {
  std::string id;
  std::vector<Turn> conversation;  // system, user, assistant(label)
  std::vector<std::string> images;
  Label label = Label::kNo;
  Provenance provenance;

  bool operator==(const SftExample&) const = default;
};

/// Fine-tuning defaults carried in the dataset header for external trainers.
struct TrainingHints {
  int lora_rank = 8;
  double learning_rate = 2e-5;
  int batch_size = 1;
  int gradient_accumulation_steps = 8;
  int epochs = 10;
  int max_token_length = 512;
};

struct DatasetMeta {
  int schema_version = kSchemaVersion;
  std::size_t train_ratio = 1;
  std::uint64_t seed = 0;
  int fold = 0;
  TrainingHints recommended_hyperparams;
};

struct SftDataset {
  DatasetMeta meta;
  std::vector<SftExample> examples;
};

/// One positive (the user's held-out target) plus `train_ratio` sampled
/// negatives per training user, shuffled with `seed`. Training users are
/// the splits whose own evaluation fold differs from `fold`.
SftDataset build_sft_dataset(const std::vector<catalog::Split>& splits,
                             const std::map<std::string, std::string>& preferences,
                             const catalog::Catalog& catalog,
                             const recommender::Recommender& prompt_builder,
                             std::size_t train_ratio, std::uint64_t seed, int fold);

std::string serialize(const SftDataset& dataset);
SftDataset parse_dataset(const std::filesystem::path& path);

struct LossReport {
  /// (example id, loss), sorted by id.
  std::vector<std::pair<std::string, double>> per_example;
  std::vector<std::size_t> token_counts;
  double mean = 0;
};

/// Teacher-forced negative log-likelihood of each example's assistant turn
/// (or the whole conversation with LossSpan::kFull), given the prefix and
/// the example's images.
LossReport eval_sft_loss(const std::vector<SftExample>& examples, gateway::Gateway& gateway,
                         gateway::LossSpan span = gateway::LossSpan::kCompletion);

json to_json(const LossReport& report);

}  // namespace msr::sft
