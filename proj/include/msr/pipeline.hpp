#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msr/config.hpp"
#include "msr/gateway.hpp"
#include "msr/metrics.hpp"

namespace msr::pipeline {

enum class Stage { kIngest, kSummarizeItems, kInferPreferences, kBuildSft, kEvalLoss, kScore, kEvaluate };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);
/// ingest, summarize-items, infer-preferences, build-sft, score, evaluate
std::vector<Stage> default_run_stages();

struct StageRecord {
  std::string stage;
  std::optional<std::uint64_t> seed;  // empty for seed-independent stages
  std::string fingerprint;
  bool reused = false;
  gateway::GatewayStats calls;
  double wall_seconds = 0;
};

struct RunManifest {
  std::string config_fingerprint;
  std::vector<StageRecord> stages;

  std::size_t backend_calls() const;
  std::size_t cache_hits() const;
  const StageRecord* find(const std::string& stage, std::optional<std::uint64_t> seed = std::nullopt) const;
  json to_json() const;
};

/// Runs stages against a workdir. Each stage writes into
/// <workdir>/stages/<stage>-<fingerprint>/ and drops complete.json last;
/// a complete stage is skipped unless forced. Fingerprints cover only
/// semantics-affecting settings, so sweeps reuse untouched upstream stages.
class Pipeline {
 public:
  /// With `gateway` null, one is built from the config (mock or HTTP).
  explicit Pipeline(RunConfig config, std::shared_ptr<gateway::Gateway> gateway = nullptr);

  /// Requested stages run in dependency order, once per configured seed.
  /// When kEvaluate is requested a combined report is written to
  /// <workdir>/report.{json,txt}.
  RunManifest run(const std::vector<Stage>& stages, bool force = false,
                  std::optional<int> fold = std::nullopt);

  std::string fingerprint(Stage stage, std::uint64_t seed) const;
  std::string config_fingerprint() const;
  std::filesystem::path stage_dir(Stage stage, std::uint64_t seed) const;
  bool complete(Stage stage, std::uint64_t seed) const;

  /// Aggregated over all seeds' folds; requires evaluate outputs.
  eval::EvalReport combined_report() const;

  const RunConfig& config() const { return config_; }
  gateway::Gateway& gateway();

 private:
  StageRecord run_stage(Stage stage, std::uint64_t seed, std::optional<int> fold, bool force);
  void require(Stage needed, Stage by, std::uint64_t seed) const;
  void bind_backends(std::uint64_t seed);

  void do_ingest(std::uint64_t seed);
  void do_summarize(std::uint64_t seed);
  void do_preferences(std::uint64_t seed);
  void do_build_sft(std::uint64_t seed, std::optional<int> fold, bool force);
  void do_eval_loss(std::uint64_t seed, std::optional<int> fold, bool force);
  void do_score(std::uint64_t seed, std::optional<int> fold, bool force);
  void do_evaluate(std::uint64_t seed);

  std::vector<int> folds(std::optional<int> fold) const;
  bool all_folds_present(Stage stage, std::uint64_t seed, const std::string& prefix) const;
  std::string data_fingerprint() const;
  std::string role_identity(gateway::Role role) const;
  json report_fingerprint() const;
  void write_manifest(const RunManifest& manifest) const;

  RunConfig config_;
  std::shared_ptr<gateway::Gateway> gateway_;
  bool owns_bindings_ = false;
  bool recommender_bound_ = false;
  mutable std::string data_fp_;
};

struct SweepRow {
  std::size_t value = 0;
  bool ok = false;
  std::string error;
  eval::EvalReport report;
  std::size_t preference_calls = 0;
  std::size_t item_calls = 0;
  bool items_reused = false;
  bool preferences_reused = false;
};

struct SweepReport {
  std::string parameter;
  std::vector<SweepRow> rows;

  json to_json() const;
  std::string table() const;
  /// Plot-ready: value,auc,auc_hw,hr,hr_hw,mrr,mrr_hw,status
  std::string csv() const;
};

/// One full evaluation per value of `parameter` (block_size or
/// summary_length). A failing value yields a failed row; the sweep goes on.
/// Outputs land in <workdir>/sweeps/<parameter>.{json,csv,txt}.
SweepReport sweep(const RunConfig& config, const std::string& parameter,
                  const std::vector<std::size_t>& values,
                  std::shared_ptr<gateway::Gateway> gateway = nullptr);

}  // namespace msr::pipeline
