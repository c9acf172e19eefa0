#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "msr/util.hpp"

namespace msr::catalog {

struct Item {
  std::string item_id;
  std::string description;
  std::optional<std::string> image_ref;  // absolute path or http(s) URL
  std::optional<std::string> summary;
};

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;

  auto operator<=>(const Interaction&) const = default;
};

struct FilterThresholds {
  std::size_t min_user_interactions = 5;
  std::size_t min_item_interactions = 5;
};

struct IngestReport {
  std::size_t interactions_read = 0;
  std::size_t duplicates_removed = 0;
  std::size_t users_removed = 0;
  std::size_t items_removed = 0;
  std::size_t interactions_removed = 0;
  std::size_t filter_rounds = 0;
};

/// Immutable after construction; safe to share across threads.
class Catalog {
 public:
  Catalog() = default;

  /// Deduplicates exact (user, item, timestamp) triples, then drops users and
  /// items under the thresholds until neither set changes.
  static Catalog build(std::vector<Item> items, std::vector<Interaction> interactions,
                       const FilterThresholds& thresholds);

  const std::map<std::string, Item>& items() const { return items_; }
  const std::vector<Interaction>& interactions() const { return interactions_; }
  const IngestReport& report() const { return report_; }

  bool contains(const std::string& item_id) const { return items_.contains(item_id); }
  const Item& item(const std::string& item_id) const;
  /// Sorted ids of every item in the catalog.
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  /// Every item the user ever interacted with (empty set for unknown users).
  const std::set<std::string>& interacted(const std::string& user_id) const;
  std::vector<std::string> user_ids() const;

 private:
  std::map<std::string, Item> items_;
  std::vector<Interaction> interactions_;
  std::vector<std::string> item_ids_;
  std::map<std::string, std::set<std::string>> by_user_;
  IngestReport report_;
};

/// Parses the line-delimited item and interaction files. Relative image
/// paths resolve against the items file's directory.
Catalog ingest(const std::filesystem::path& interactions_file,
               const std::filesystem::path& items_file, const FilterThresholds& thresholds);

struct UserSequence {
  std::string user_id;
  std::vector<std::string> items;

  bool operator==(const UserSequence&) const = default;
};

/// One chronological sequence per user (ties by item_id), consecutive
/// repeats collapsed, users shorter than min_seq_len dropped.
std::vector<UserSequence> build_sequences(const Catalog& catalog, std::size_t min_seq_len = 5);

/// Per-user evaluation split. `fold` is the fold in which the user is
/// evaluated; in every other fold the user is a training user.
struct Split {
  int fold = 0;
  std::string user_id;
  std::vector<std::string> history;
  std::string target;
  std::vector<std::string> negatives;

  bool operator==(const Split&) const = default;
};

/// `ratio` distinct items drawn uniformly without replacement from the
/// catalog items outside `interacted`.
std::vector<std::string> sample_negatives(const std::set<std::string>& interacted,
                                          const Catalog& catalog, std::size_t ratio,
                                          std::uint64_t seed);

/// Leave-one-out split: users are shuffled with `seed` and dealt round-robin
/// into n_folds groups; each user's last item is the target.
std::vector<Split> split_leave_one_out(const std::vector<UserSequence>& sequences,
                                       const Catalog& catalog, int n_folds, std::uint64_t seed,
                                       std::size_t eval_ratio = 20);

/// Seed for a user's negative sample within a named stream ("eval", "train/3").
std::uint64_t negative_seed(std::uint64_t seed, std::string_view stream,
                            const std::string& user_id);

json to_json(const Split& split);
Split split_from_json(const json& record);
void write_splits(const std::filesystem::path& path, const std::vector<Split>& splits);
std::vector<Split> read_splits(const std::filesystem::path& path);

json to_json(const Item& item);
Item item_from_json(const json& record);

}  // namespace msr::catalog
