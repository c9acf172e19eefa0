#include "msr/catalog.hpp"

#include <algorithm>

#include "msr/error.hpp"

namespace msr::catalog {

namespace fs = std::filesystem;

namespace {

std::string where(const fs::path& file, std::size_t line) {
  return file.filename().string() + ":" + std::to_string(line);
}

std::string required_string(const json& record, const char* key, const fs::path& file,
                            std::size_t line) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_string())
    throw InputError(where(file, line) + ": malformed record: missing string field '" + key + "'");
  return it->get<std::string>();
}

bool is_url(const std::string& ref) {
  return ref.starts_with("http://") || ref.starts_with("https://");
}

}  // namespace

Catalog Catalog::build(std::vector<Item> items, std::vector<Interaction> interactions,
                       const FilterThresholds& thresholds) {
  Catalog c;
  c.report_.interactions_read = interactions.size();

  std::map<std::string, Item> by_id;
  for (auto& item : items) {
    if (item.description.empty())
      throw InputError("item " + item.item_id + " has an empty description");
    std::string id = item.item_id;
    if (!by_id.emplace(id, std::move(item)).second)
      throw InputError("duplicate item_id " + id);
  }
  for (const auto& x : interactions) {
    if (!by_id.contains(x.item_id))
      throw InputError("interaction references unknown item_id " + x.item_id);
    if (x.timestamp < 0) throw InputError("negative timestamp for user " + x.user_id);
  }

  std::sort(interactions.begin(), interactions.end());
  auto last = std::unique(interactions.begin(), interactions.end());
  c.report_.duplicates_removed = static_cast<std::size_t>(interactions.end() - last);
  interactions.erase(last, interactions.end());

  const std::size_t users_before = [&] {
    std::set<std::string> u;
    for (const auto& x : interactions) u.insert(x.user_id);
    return u.size();
  }();
  const std::size_t items_before = by_id.size();
  const std::size_t deduped = interactions.size();

  for (;;) {
    ++c.report_.filter_rounds;
    std::map<std::string, std::size_t> user_count, item_count;
    for (const auto& x : interactions) {
      ++user_count[x.user_id];
      ++item_count[x.item_id];
    }
    std::size_t before_items = by_id.size();
    std::erase_if(by_id, [&](const auto& kv) {
      auto it = item_count.find(kv.first);
      std::size_t n = it == item_count.end() ? 0 : it->second;
      return n < thresholds.min_item_interactions;
    });
    std::size_t before = interactions.size();
    std::erase_if(interactions, [&](const Interaction& x) {
      return user_count[x.user_id] < thresholds.min_user_interactions || !by_id.contains(x.item_id);
    });
    if (interactions.size() == before && by_id.size() == before_items) break;
  }

  for (const auto& x : interactions) c.by_user_[x.user_id].insert(x.item_id);
  c.report_.users_removed = users_before - c.by_user_.size();
  c.report_.items_removed = items_before - by_id.size();
  c.report_.interactions_removed = deduped - interactions.size();
  c.items_ = std::move(by_id);
  c.interactions_ = std::move(interactions);
  for (const auto& [id, _] : c.items_) c.item_ids_.push_back(id);
  return c;
}

const Item& Catalog::item(const std::string& item_id) const {
  auto it = items_.find(item_id);
  if (it == items_.end()) throw InputError("unknown item_id " + item_id);
  return it->second;
}

const std::set<std::string>& Catalog::interacted(const std::string& user_id) const {
  static const std::set<std::string> kEmpty;
  auto it = by_user_.find(user_id);
  return it == by_user_.end() ? kEmpty : it->second;
}

std::vector<std::string> Catalog::user_ids() const {
  std::vector<std::string> out;
  for (const auto& [u, _] : by_user_) out.push_back(u);
  return out;
}

Catalog ingest(const fs::path& interactions_file, const fs::path& items_file,
               const FilterThresholds& thresholds) {
  std::vector<Item> items;
  const fs::path base = fs::absolute(items_file).parent_path();
  read_jsonl(items_file, [&](std::size_t line, const json& r) {
    Item item;
    item.item_id = required_string(r, "item_id", items_file, line);
    item.description = required_string(r, "description", items_file, line);
    if (item.description.empty())
      throw InputError(where(items_file, line) + ": empty description for item " + item.item_id);
    if (auto it = r.find("image_ref"); it != r.end() && !it->is_null()) {
      if (!it->is_string())
        throw InputError(where(items_file, line) + ": malformed record: image_ref not a string");
      std::string ref = it->get<std::string>();
      if (!ref.empty()) item.image_ref = is_url(ref) ? ref : (base / ref).lexically_normal().string();
    }
    items.push_back(std::move(item));
  });

  std::set<std::string> known;
  for (const auto& item : items) known.insert(item.item_id);

  std::vector<Interaction> interactions;
  read_jsonl(interactions_file, [&](std::size_t line, const json& r) {
    Interaction x;
    x.user_id = required_string(r, "user_id", interactions_file, line);
    x.item_id = required_string(r, "item_id", interactions_file, line);
    auto ts = r.find("timestamp");
    if (ts == r.end() || !ts->is_number_integer())
      throw InputError(where(interactions_file, line) +
                       ": malformed record: missing integer field 'timestamp'");
    x.timestamp = ts->get<std::int64_t>();
    if (x.timestamp < 0)
      throw InputError(where(interactions_file, line) + ": negative timestamp");
    if (!known.contains(x.item_id))
      throw InputError(where(interactions_file, line) + ": unknown item_id " + x.item_id);
    interactions.push_back(std::move(x));
  });
  if (interactions.empty()) throw InputError("no interactions in " + interactions_file.string());

  return Catalog::build(std::move(items), std::move(interactions), thresholds);
}

std::vector<UserSequence> build_sequences(const Catalog& catalog, std::size_t min_seq_len) {
  std::map<std::string, std::vector<const Interaction*>> per_user;
  for (const auto& x : catalog.interactions()) per_user[x.user_id].push_back(&x);

  std::vector<UserSequence> out;
  for (auto& [user, xs] : per_user) {
    std::sort(xs.begin(), xs.end(), [](const Interaction* a, const Interaction* b) {
      if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
      return a->item_id < b->item_id;
    });
    UserSequence seq{user, {}};
    for (const auto* x : xs)
      if (seq.items.empty() || seq.items.back() != x->item_id) seq.items.push_back(x->item_id);
    if (seq.items.size() >= min_seq_len) out.push_back(std::move(seq));
  }
  return out;
}

std::uint64_t negative_seed(std::uint64_t seed, std::string_view stream,
                            const std::string& user_id) {
  std::string name = "negatives/";
  name.append(stream);
  name.push_back('/');
  name += user_id;
  return derive_seed(seed, name);
}

std::vector<std::string> sample_negatives(const std::set<std::string>& interacted,
                                          const Catalog& catalog, std::size_t ratio,
                                          std::uint64_t seed) {
  std::vector<std::string> pool;
  pool.reserve(catalog.item_ids().size());
  for (const auto& id : catalog.item_ids())
    if (!interacted.contains(id)) pool.push_back(id);
  if (pool.size() < ratio)
    throw InputError("insufficient negative pool: need " + std::to_string(ratio) + ", have " +
                     std::to_string(pool.size()));

  // Partial Fisher-Yates over the sorted pool.
  SeededRng rng(seed);
  for (std::size_t i = 0; i < ratio; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(ratio);
  return pool;
}

std::vector<Split> split_leave_one_out(const std::vector<UserSequence>& sequences,
                                       const Catalog& catalog, int n_folds, std::uint64_t seed,
                                       std::size_t eval_ratio) {
  if (n_folds < 2) throw InputError("n_folds must be at least 2");
  if (static_cast<std::size_t>(n_folds) > sequences.size())
    throw InputError("n_folds (" + std::to_string(n_folds) + ") exceeds user count (" +
                     std::to_string(sequences.size()) + ")");

  std::vector<const UserSequence*> order;
  for (const auto& s : sequences) {
    if (s.items.size() < 2) throw InputError("sequence for " + s.user_id + " shorter than 2");
    order.push_back(&s);
  }
  std::sort(order.begin(), order.end(),
            [](const UserSequence* a, const UserSequence* b) { return a->user_id < b->user_id; });
  SeededRng rng(derive_seed(seed, "folds"));
  rng.shuffle(order);

  std::vector<Split> out;
  out.reserve(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const UserSequence& s = *order[pos];
    Split split;
    split.fold = static_cast<int>(pos % static_cast<std::size_t>(n_folds));
    split.user_id = s.user_id;
    split.history.assign(s.items.begin(), s.items.end() - 1);
    split.target = s.items.back();
    std::set<std::string> excluded = catalog.interacted(s.user_id);
    excluded.insert(s.items.begin(), s.items.end());
    split.negatives =
        sample_negatives(excluded, catalog, eval_ratio, negative_seed(seed, "eval", s.user_id));
    out.push_back(std::move(split));
  }
  std::sort(out.begin(), out.end(), [](const Split& a, const Split& b) {
    return a.fold != b.fold ? a.fold < b.fold : a.user_id < b.user_id;
  });
  return out;
}

json to_json(const Split& s) {
  return json{{"fold", s.fold},       {"user_id", s.user_id},  {"history", s.history},
              {"target", s.target},   {"negatives", s.negatives}};
}

Split split_from_json(const json& r) {
  Split s;
  s.fold = r.at("fold").get<int>();
  s.user_id = r.at("user_id").get<std::string>();
  s.history = r.at("history").get<std::vector<std::string>>();
  s.target = r.at("target").get<std::string>();
  s.negatives = r.at("negatives").get<std::vector<std::string>>();
  return s;
}

void write_splits(const fs::path& path, const std::vector<Split>& splits) {
  std::vector<json> records;
  for (const auto& s : splits) records.push_back(to_json(s));
  write_file_atomic(path, to_jsonl(records));
}

std::vector<Split> read_splits(const fs::path& path) {
  std::vector<Split> out;
  read_jsonl(path, [&](std::size_t, const json& r) { out.push_back(split_from_json(r)); });
  return out;
}

json to_json(const Item& item) {
  json j{{"item_id", item.item_id}, {"description", item.description}};
  j["image_ref"] = item.image_ref ? json(*item.image_ref) : json(nullptr);
  if (item.summary) j["summary"] = *item.summary;
  return j;
}

Item item_from_json(const json& r) {
  Item item;
  item.item_id = r.at("item_id").get<std::string>();
  item.description = r.at("description").get<std::string>();
  if (auto it = r.find("image_ref"); it != r.end() && it->is_string()) item.image_ref = *it;
  if (auto it = r.find("summary"); it != r.end() && it->is_string()) item.summary = *it;
  return item;
}

}  // namespace msr::catalog
