#include <gtest/gtest.h>

#include "msr/catalog.hpp"
#include "msr/error.hpp"
#include "test_support.hpp"

using namespace msr;
using namespace msr::catalog;
using msr::fx::TempDir;

namespace {

void write_items(const std::filesystem::path& f, std::size_t n) {
  std::vector<json> rows;
  for (const auto& it : fx::plain_items(n))
    rows.push_back({{"item_id", it.item_id}, {"description", it.description}});
  fx::write_text(f, to_jsonl(rows));
}

/// users with given interaction counts, each over distinct items starting at i000.
std::vector<Interaction> users_with(const std::vector<std::size_t>& counts) {
  std::vector<Interaction> xs;
  for (std::size_t u = 0; u < counts.size(); ++u)
    for (std::size_t k = 0; k < counts[u]; ++k) {
      char id[16];
      std::snprintf(id, sizeof id, "i%03zu", k);
      xs.push_back({"u" + std::to_string(u), id, static_cast<std::int64_t>(100 + k)});
    }
  return xs;
}

Catalog catalog_for(const std::vector<std::size_t>& counts, std::size_t n_items = 40) {
  return Catalog::build(fx::plain_items(n_items), users_with(counts), {0, 0});
}

std::vector<UserSequence> sequences_for(std::size_t users, std::size_t len) {
  std::vector<UserSequence> out;
  for (std::size_t u = 0; u < users; ++u) {
    UserSequence s{"u" + std::to_string(100 + u), {}};
    for (std::size_t k = 0; k < len; ++k) {
      char id[16];
      std::snprintf(id, sizeof id, "i%03zu", (u + k) % 30);
      s.items.push_back(id);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Ingest, DropsUsersUnderThreshold) {
  auto c = Catalog::build(fx::plain_items(10), users_with({6, 6, 2}), {5, 1});
  EXPECT_EQ(c.user_ids(), (std::vector<std::string>{"u0", "u1"}));
  EXPECT_EQ(c.report().users_removed, 1u);
  EXPECT_EQ(c.interactions().size(), 12u);
}

TEST(Ingest, FilteringReachesFixpoint) {
  // u2 survives the user filter only while i9 does; dropping i9 removes u2.
  auto xs = users_with({5, 5});
  for (int k = 0; k < 4; ++k) xs.push_back({"u2", "i00" + std::to_string(k), 1});
  xs.push_back({"u2", "i009", 2});
  auto c = Catalog::build(fx::plain_items(10), xs, {5, 2});
  EXPECT_EQ(c.user_ids(), (std::vector<std::string>{"u0", "u1"}));
  EXPECT_FALSE(c.contains("i009"));
  EXPECT_GE(c.report().filter_rounds, 2u);
}

TEST(Ingest, DeduplicatesExactTriples) {
  auto xs = users_with({5});
  xs.push_back(xs[0]);
  xs.push_back(xs[1]);
  auto c = Catalog::build(fx::plain_items(10), xs, {5, 1});
  EXPECT_EQ(c.report().duplicates_removed, 2u);
  EXPECT_EQ(c.interactions().size(), 5u);
}

TEST(Ingest, EmptyInteractionsFileErrors) {
  TempDir dir;
  write_items(dir / "items.jsonl", 3);
  fx::write_text(dir / "x.jsonl", "");
  try {
    ingest(dir / "x.jsonl", dir / "items.jsonl", {});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("no interactions"), std::string::npos);
  }
}

TEST(Ingest, MalformedRecordNamesLine) {
  TempDir dir;
  write_items(dir / "items.jsonl", 3);
  fx::write_text(dir / "x.jsonl", to_jsonl({fx::interaction("u", "i000", 1),
                                                 json{{"user_id", "u"}, {"item_id", "i001"}}}));
  try {
    ingest(dir / "x.jsonl", dir / "items.jsonl", {});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("x.jsonl:2"), std::string::npos);
  }
}

TEST(Ingest, UnknownItemAndEmptyDescriptionRejected) {
  TempDir dir;
  write_items(dir / "items.jsonl", 3);
  fx::write_text(dir / "x.jsonl", to_jsonl({fx::interaction("u", "zzz", 1)}));
  EXPECT_THROW(ingest(dir / "x.jsonl", dir / "items.jsonl", {}), InputError);
  fx::write_text(dir / "bad_items.jsonl", R"({"item_id":"a","description":""})" "\n");
  fx::write_text(dir / "y.jsonl", to_jsonl({fx::interaction("u", "a", 1)}));
  EXPECT_THROW(ingest(dir / "y.jsonl", dir / "bad_items.jsonl", {}), InputError);
}

TEST(Ingest, RelativeImageResolvesAgainstItemsFile) {
  TempDir dir;
  fx::write_text(dir / "data/items.jsonl",
                      R"({"item_id":"a","description":"d","image_ref":"img/a.png"})" "\n"
                      R"({"item_id":"b","description":"d","image_ref":"https://x/b.png"})" "\n");
  fx::write_text(dir / "data/x.jsonl", to_jsonl({fx::interaction("u", "a", 1),
                                                      fx::interaction("u", "b", 2)}));
  auto c = ingest(dir / "data/x.jsonl", dir / "data/items.jsonl", {0, 0});
  EXPECT_EQ(*c.item("a").image_ref, (dir / "data/img/a.png").string());
  EXPECT_EQ(*c.item("b").image_ref, "https://x/b.png");
}

TEST(Sequences, ChronologicalWithItemIdTieBreak) {
  std::vector<Interaction> xs{{"u", "i003", 5}, {"u", "i001", 5}, {"u", "i002", 1},
                              {"u", "i004", 9}, {"u", "i000", 9}};
  auto c = Catalog::build(fx::plain_items(5), xs, {0, 0});
  auto seqs = build_sequences(c, 1);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].items, (std::vector<std::string>{"i002", "i001", "i003", "i000", "i004"}));
}

TEST(Sequences, ConsecutiveRepeatsCollapseAndShortDropped) {
  std::vector<Interaction> xs{{"u", "i001", 1}, {"u", "i001", 2}, {"u", "i002", 3},
                              {"u", "i001", 4}, {"v", "i001", 1}};
  auto c = Catalog::build(fx::plain_items(3), xs, {0, 0});
  auto seqs = build_sequences(c, 2);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].items, (std::vector<std::string>{"i001", "i002", "i001"}));
}

TEST(Split, TenUsersFiveFoldsTwoEach) {
  auto seqs = sequences_for(10, 6);
  auto c = Catalog::build(fx::plain_items(40), {}, {0, 0});
  auto splits = split_leave_one_out(seqs, c, 5, 42, 20);
  std::map<int, int> per_fold;
  for (const auto& s : splits) ++per_fold[s.fold];
  ASSERT_EQ(per_fold.size(), 5u);
  for (auto [f, n] : per_fold) EXPECT_EQ(n, 2) << "fold " << f;
}

TEST(Split, LeaveOneOutTargetAndHistory) {
  auto seqs = sequences_for(5, 7);
  auto c = Catalog::build(fx::plain_items(40), {}, {0, 0});
  for (const auto& s : split_leave_one_out(seqs, c, 5, 1, 20)) {
    auto it = std::find_if(seqs.begin(), seqs.end(), [&](auto& q) { return q.user_id == s.user_id; });
    ASSERT_NE(it, seqs.end());
    EXPECT_EQ(s.target, it->items.back());
    EXPECT_EQ(s.history, std::vector<std::string>(it->items.begin(), it->items.end() - 1));
    EXPECT_EQ(s.negatives.size(), 20u);
  }
}

TEST(Split, SameSeedIdenticalDifferentSeedDiffers) {
  auto seqs = sequences_for(30, 6);
  auto c = Catalog::build(fx::plain_items(40), {}, {0, 0});
  auto a = split_leave_one_out(seqs, c, 5, 7, 20);
  auto b = split_leave_one_out(seqs, c, 5, 7, 20);
  auto d = split_leave_one_out(seqs, c, 5, 8, 20);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, d);
}

TEST(Negatives, RatiosGiveExactCounts) {
  auto c = catalog_for({6}, 40);
  const auto& seen = c.interacted("u0");
  EXPECT_EQ(sample_negatives(seen, c, 20, 1).size(), 20u);
  EXPECT_EQ(sample_negatives(seen, c, 1, 1).size(), 1u);
  auto many = sample_negatives(seen, c, 34, 1);
  EXPECT_EQ(std::set<std::string>(many.begin(), many.end()).size(), 34u);
}

TEST(Negatives, PoolExhaustionErrors) {
  auto c = catalog_for({6}, 10);
  EXPECT_NO_THROW(sample_negatives(c.interacted("u0"), c, 4, 1));
  EXPECT_THROW(sample_negatives(c.interacted("u0"), c, 5, 1), InputError);
}

TEST(Negatives, NeverIntersectHistoryProperty) {
  SeededRng gen(2024);
  auto items = fx::plain_items(200);
  std::size_t drawn = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::set<std::string> seen;
    const std::size_t n_seen = 1 + gen.below(150);
    while (seen.size() < n_seen) seen.insert(items[gen.below(items.size())].item_id);
    auto c = Catalog::build(items, {}, {0, 0});
    const std::size_t ratio = 1 + gen.below(std::min<std::size_t>(20, 200 - n_seen));
    auto negs = sample_negatives(seen, c, ratio, gen.next());
    ASSERT_EQ(negs.size(), ratio);
    ASSERT_EQ(std::set<std::string>(negs.begin(), negs.end()).size(), ratio);
    for (const auto& n : negs) ASSERT_FALSE(seen.contains(n));
    drawn += ratio;
  }
  EXPECT_GT(drawn, 1000u);
}

TEST(Negatives, DeterministicPerSeed) {
  auto c = catalog_for({6}, 40);
  EXPECT_EQ(sample_negatives(c.interacted("u0"), c, 10, 5), sample_negatives(c.interacted("u0"), c, 10, 5));
  EXPECT_NE(sample_negatives(c.interacted("u0"), c, 10, 5), sample_negatives(c.interacted("u0"), c, 10, 6));
}

TEST(Split, RoundTripsThroughJsonl) {
  TempDir dir;
  auto seqs = sequences_for(10, 6);
  auto c = Catalog::build(fx::plain_items(40), {}, {0, 0});
  auto splits = split_leave_one_out(seqs, c, 5, 3, 20);
  write_splits(dir / "s.jsonl", splits);
  EXPECT_EQ(read_splits(dir / "s.jsonl"), splits);
}
