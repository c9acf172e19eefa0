#include "msr/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "msr/error.hpp"

namespace msr::eval {

UserEvalRecord make_record(const std::string& user_id, const std::string& positive_id,
                           double positive_score,
                           const std::vector<std::pair<std::string, double>>& negatives) {
  UserEvalRecord r;
  r.user_id = user_id;
  r.positive_score = positive_score;
  r.rank = 1;
  for (const auto& [id, s] : negatives) {
    r.negative_scores.push_back(s);
    if (s > positive_score || (s == positive_score && id < positive_id)) ++r.rank;
  }
  return r;
}

double auc_per_user(const UserEvalRecord& r) {
  if (r.negative_scores.empty()) throw InputError("record for " + r.user_id + " has no negatives");
  double credit = 0;
  for (double s : r.negative_scores) {
    if (s < r.positive_score)
      credit += 1.0;
    else if (s == r.positive_score)
      credit += 0.5;
  }
  return credit / static_cast<double>(r.negative_scores.size());
}

namespace {

void check_k(const UserEvalRecord& r, std::size_t k) {
  if (k < 1 || k > r.negative_scores.size() + 1)
    throw InputError("K=" + std::to_string(k) + " outside [1, candidate count]");
}

}  // namespace

int hit_rate_at_k(const UserEvalRecord& r, std::size_t k) {
  check_k(r, k);
  return r.rank <= k ? 1 : 0;
}

double mrr_at_k(const UserEvalRecord& r, std::size_t k) {
  check_k(r, k);
  return r.rank <= k ? 1.0 / static_cast<double>(r.rank) : 0.0;
}

FoldMetrics evaluate(int fold, const std::vector<UserEvalRecord>& records, std::size_t k,
                     std::uint64_t seed) {
  if (records.empty()) throw InputError("fold " + std::to_string(fold) + " has no complete users");
  FoldMetrics m;
  m.fold = fold;
  m.seed = seed;
  m.users = records.size();
  for (const auto& r : records) {
    m.auc += auc_per_user(r);
    m.hr_at_k += hit_rate_at_k(r, k);
    m.mrr_at_k += mrr_at_k(r, k);
  }
  const auto n = static_cast<double>(records.size());
  m.auc /= n;
  m.hr_at_k /= n;
  m.mrr_at_k /= n;
  return m;
}

double t_half_width(const std::vector<double>& values, double confidence) {
  if (values.size() < 2) return 0.0;
  const auto n = static_cast<double>(values.size());
  double mean = 0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  if (sd == 0) return 0.0;
  boost::math::students_t dist(n - 1);
  const double t = boost::math::quantile(boost::math::complement(dist, (1 - confidence) / 2));
  return t * sd / std::sqrt(n);
}

EvalReport aggregate(std::vector<FoldMetrics> folds, std::size_t k, json fingerprint) {
  if (folds.empty()) throw InputError("nothing to aggregate");
  EvalReport report;
  std::sort(folds.begin(), folds.end(), [](const FoldMetrics& a, const FoldMetrics& b) {
    return a.seed != b.seed ? a.seed < b.seed : a.fold < b.fold;
  });
  auto summarize = [&](double FoldMetrics::*field) {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.*field);
    double mean = 0;
    for (double x : v) mean += x;
    return MetricSummary{mean / static_cast<double>(v.size()), t_half_width(v)};
  };
  report.auc = summarize(&FoldMetrics::auc);
  report.hr_at_k = summarize(&FoldMetrics::hr_at_k);
  report.mrr_at_k = summarize(&FoldMetrics::mrr_at_k);
  report.per_fold = std::move(folds);
  report.k = k;
  report.fingerprint = std::move(fingerprint);
  return report;
}

json to_json(const EvalReport& r) {
  json folds = json::array();
  for (const auto& f : r.per_fold)
    folds.push_back({{"fold", f.fold},
                     {"seed", f.seed},
                     {"users", f.users},
                     {"auc", f.auc},
                     {"hr_at_k", f.hr_at_k},
                     {"mrr_at_k", f.mrr_at_k}});
  auto summary = [](const MetricSummary& m) {
    return json{{"mean", m.mean}, {"half_width_95", m.half_width}};
  };
  return json{{"k", r.k},
              {"per_fold", folds},
              {"auc", summary(r.auc)},
              {"hr_at_k", summary(r.hr_at_k)},
              {"mrr_at_k", summary(r.mrr_at_k)},
              {"fingerprint", r.fingerprint}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.k = j.at("k").get<std::size_t>();
  for (const auto& f : j.at("per_fold"))
    r.per_fold.push_back({f.at("fold").get<int>(), f.at("seed").get<std::uint64_t>(),
                          f.at("users").get<std::size_t>(), f.at("auc").get<double>(),
                          f.at("hr_at_k").get<double>(), f.at("mrr_at_k").get<double>()});
  auto summary = [](const json& m) {
    return MetricSummary{m.at("mean").get<double>(), m.at("half_width_95").get<double>()};
  };
  r.auc = summary(j.at("auc"));
  r.hr_at_k = summary(j.at("hr_at_k"));
  r.mrr_at_k = summary(j.at("mrr_at_k"));
  r.fingerprint = j.value("fingerprint", json::object());
  return r;
}

std::string format_table(const EvalReport& r) {
  const std::string hr = fmt::format("HR@{}", r.k), mrr = fmt::format("MRR@{}", r.k);
  std::string out = fmt::format("{:<14} {:>6} {:>8} {:>8} {:>8}   {:>7} {:>7} {:>7}\n", "fold", "users",
                                "AUC", hr, mrr, "AUC%", hr + "%", mrr + "%");
  for (const auto& f : r.per_fold) {
    std::string name = fmt::format("s{}/f{}", f.seed, f.fold);
    out += fmt::format("{:<14} {:>6} {:>8.4f} {:>8.4f} {:>8.4f}   {:>7.2f} {:>7.2f} {:>7.2f}\n", name,
                       f.users, f.auc, f.hr_at_k, f.mrr_at_k, 100 * f.auc, 100 * f.hr_at_k,
                       100 * f.mrr_at_k);
  }
  out += fmt::format("{:<14} {:>6} {:>8.4f} {:>8.4f} {:>8.4f}   {:>7.2f} {:>7.2f} {:>7.2f}\n", "mean", "",
                     r.auc.mean, r.hr_at_k.mean, r.mrr_at_k.mean, 100 * r.auc.mean,
                     100 * r.hr_at_k.mean, 100 * r.mrr_at_k.mean);
  out += fmt::format("{:<14} {:>6} {:>8.4f} {:>8.4f} {:>8.4f}   {:>7.2f} {:>7.2f} {:>7.2f}\n", "95% ±", "",
                     r.auc.half_width, r.hr_at_k.half_width, r.mrr_at_k.half_width,
                     100 * r.auc.half_width, 100 * r.hr_at_k.half_width, 100 * r.mrr_at_k.half_width);
  return out;
}

}  // namespace msr::eval
