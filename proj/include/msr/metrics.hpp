#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msr/util.hpp"

namespace msr::eval {

struct UserEvalRecord {
  std::string user_id;
  double positive_score = 0;
  std::vector<double> negative_scores;
  /// 1-based rank of the positive after the item_id tie-break.
  std::size_t rank = 1;
};

/// Builds a record from raw (item_id, score) pairs. Ties with the positive
/// are resolved by item_id ascending, as in recommender::rank.
UserEvalRecord make_record(const std::string& user_id, const std::string& positive_id,
                           double positive_score,
                           const std::vector<std::pair<std::string, double>>& negatives);

/// (#negatives below the positive + 0.5 * #ties) / #negatives
double auc_per_user(const UserEvalRecord& record);
/// 1 if rank <= k. Requires 1 <= k <= candidate count.
int hit_rate_at_k(const UserEvalRecord& record, std::size_t k);
/// 1/rank if rank <= k, else 0.
double mrr_at_k(const UserEvalRecord& record, std::size_t k);

struct FoldMetrics {
  int fold = 0;
  std::uint64_t seed = 0;
  std::size_t users = 0;
  double auc = 0;
  double hr_at_k = 0;
  double mrr_at_k = 0;
};

/// Means over the fold's users. Throws if `records` is empty.
FoldMetrics evaluate(int fold, const std::vector<UserEvalRecord>& records, std::size_t k,
                     std::uint64_t seed = 0);

struct MetricSummary {
  double mean = 0;
  double half_width = 0;  // two-sided 95% Student-t over fold means
};

/// Half-width t_{0.975, n-1} * s / sqrt(n); 0 for fewer than two values.
double t_half_width(const std::vector<double>& values, double confidence = 0.95);

struct EvalReport {
  std::vector<FoldMetrics> per_fold;
  MetricSummary auc;
  MetricSummary hr_at_k;
  MetricSummary mrr_at_k;
  std::size_t k = 5;
  json fingerprint = json::object();
};

EvalReport aggregate(std::vector<FoldMetrics> folds, std::size_t k, json fingerprint = json::object());

json to_json(const EvalReport& report);
EvalReport report_from_json(const json& j);
/// Aligned table: one row per fold plus mean and 95% half-width, in both
/// [0,1] and x100 form.
std::string format_table(const EvalReport& report);

}  // namespace msr::eval
