#include <gtest/gtest.h>

#include <regex>

#include "msr/error.hpp"
#include "msr/item_summarizer.hpp"
#include "test_support.hpp"

using namespace msr;
using namespace msr::items;
using msr::fx::TempDir;

namespace {

std::set<std::string> markers(const std::string& text) {
  static const std::regex kMarker(R"(<m:[0-9a-f]{10}>)");
  std::set<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kMarker); it != std::sregex_iterator(); ++it)
    out.insert(it->str());
  return out;
}

struct Rig {
  std::shared_ptr<gateway::MockBackend> mock = gateway::mock_backend(3, gateway::MockBehavior::hash_text());
  std::shared_ptr<gateway::Gateway> gw = fx::mock_gateway(mock);
  ItemSummarizer make(SummarizerOptions o = {}) const {
    return ItemSummarizer(*gw, prompts::TemplateSet::defaults(), o);
  }
};

}  // namespace

TEST(ItemSummarizer, FullModeIssuesThreeCalls) {
  TempDir dir;
  Rig rig;
  auto s = rig.make().summarize_item(fx::image_item(dir.path(), "a"), SummaryMode::kFull);
  EXPECT_EQ(rig.mock->calls(), 3u);
  EXPECT_EQ(rig.mock->calls(gateway::Role::kItemMllm), 3u);
  EXPECT_EQ(s.mode, SummaryMode::kFull);
  ASSERT_TRUE(s.image_description);
  EXPECT_TRUE(s.warnings.empty());
}

TEST(ItemSummarizer, TextOnlyIssuesOneCall) {
  TempDir dir;
  Rig rig;
  auto s = rig.make().summarize_item(fx::image_item(dir.path(), "a"), SummaryMode::kTextOnly);
  EXPECT_EQ(rig.mock->calls(), 1u);
  EXPECT_FALSE(s.image_description);
  EXPECT_EQ(s.unified_summary, s.text_summary);
}

TEST(ItemSummarizer, SingleCallVariantIssuesOneCall) {
  TempDir dir;
  Rig rig;
  SummarizerOptions o;
  o.single_call = true;
  auto s = rig.make(o).summarize_item(fx::image_item(dir.path(), "a"), SummaryMode::kFull);
  EXPECT_EQ(rig.mock->calls(), 1u);
  EXPECT_EQ(s.mode, SummaryMode::kFull);
}

TEST(ItemSummarizer, FusionKeepsContentFromBothInputs) {
  TempDir dir;
  Rig rig;
  auto s = rig.make().summarize_item(fx::image_item(dir.path(), "a"), SummaryMode::kFull);
  auto fused = markers(s.unified_summary);
  for (const auto& source : {s.text_summary, *s.image_description}) {
    auto m = markers(source);
    ASSERT_FALSE(m.empty());
    EXPECT_TRUE(fused.contains(*m.begin())) << "missing " << *m.begin();
  }
}

TEST(ItemSummarizer, FusionCapTruncates) {
  TempDir dir;
  Rig rig;
  SummarizerOptions o;
  o.target_words = 300;
  o.fuse_cap_tokens = 120;
  auto summarizer = rig.make(o);
  auto item = fx::image_item(dir.path(), "a");
  auto fused = summarizer.fuse(item, "text " + std::string(2000, 'x'), "image words here");
  EXPECT_LE(estimate_tokens(fused, 4), 120u);
  auto s = summarizer.summarize_item(item, SummaryMode::kFull);
  EXPECT_LE(estimate_tokens(s.unified_summary, 4), 120u);
  EXPECT_GT(estimate_tokens(s.text_summary, 4), 120u);
}

TEST(ItemSummarizer, FusionNeedsBothInputs) {
  Rig rig;
  auto item = fx::plain_items(1)[0];
  EXPECT_THROW(rig.make().fuse(item, "", "image"), InputError);
  EXPECT_THROW(rig.make().fuse(item, "text", "  "), InputError);
  EXPECT_EQ(rig.mock->calls(), 0u);
}

TEST(ItemSummarizer, MissingImageFallsBackToText) {
  Rig rig;
  auto item = fx::plain_items(1)[0];
  item.image_ref = "/nonexistent/img.png";
  auto s = rig.make().summarize_item(item, SummaryMode::kFull);
  EXPECT_EQ(s.mode, SummaryMode::kTextOnly);
  EXPECT_EQ(rig.mock->calls(), 1u);
  ASSERT_EQ(s.warnings.size(), 1u);
}

TEST(ItemSummarizer, MissingImageErrorPolicyRaises) {
  Rig rig;
  SummarizerOptions o;
  o.missing_image = MissingImagePolicy::kError;
  auto item = fx::plain_items(1)[0];
  EXPECT_THROW(rig.make(o).summarize_item(item, SummaryMode::kFull), ImageError);
}

TEST(ItemSummarizer, CorruptImageFallsBack) {
  TempDir dir;
  Rig rig;
  auto item = fx::image_item(dir.path(), "a");
  auto bytes = read_binary(*item.image_ref);
  bytes.resize(bytes.size() - 4);
  write_file_atomic(*item.image_ref, std::string(bytes.begin(), bytes.end()));
  auto s = rig.make().summarize_item(item, SummaryMode::kFull);
  EXPECT_EQ(s.mode, SummaryMode::kTextOnly);
  EXPECT_FALSE(s.warnings.empty());
}

TEST(ItemSummarizer, TextOnlyIgnoresImageBytes) {
  TempDir dir;
  auto item = fx::image_item(dir.path(), "a");
  Rig before;
  auto a = before.make().summarize_item(item, SummaryMode::kTextOnly);
  auto bytes = read_binary(*item.image_ref);
  bytes[bytes.size() / 2] ^= 0xff;
  write_file_atomic(*item.image_ref, std::string(bytes.begin(), bytes.end()));
  Rig after;
  auto b = after.make().summarize_item(item, SummaryMode::kTextOnly);
  EXPECT_EQ(a, b);
}

TEST(ItemSummarizer, ImageChangeChangesFullSummary) {
  TempDir dir;
  auto item = fx::image_item(dir.path(), "a");
  Rig rig;
  auto a = rig.make().summarize_item(item, SummaryMode::kFull);
  auto png = synthetic::make_png(2, 2, 200, 1, 1);
  write_file_atomic(*item.image_ref, std::string(png.begin(), png.end()));
  auto b = rig.make().summarize_item(item, SummaryMode::kFull);
  EXPECT_NE(a.image_description, b.image_description);
  EXPECT_EQ(a.text_summary, b.text_summary);
}

TEST(ItemSummarizer, LengthGap) {
  EXPECT_DOUBLE_EQ(length_gap("a b c d", "a b"), 0.5);
  EXPECT_DOUBLE_EQ(length_gap("", ""), 0.0);
}

TEST(ItemSummarizer, BackendErrorsNameTheItem) {
  gateway::Gateway gw({std::nullopt, 4});
  ItemSummarizer s(gw, prompts::TemplateSet::defaults(), {});
  auto item = fx::plain_items(1)[0];
  try {
    s.summarize_item(item, SummaryMode::kTextOnly);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("item i000"), std::string::npos);
  }
}

TEST(ItemSummarizer, SummarizeAllIsParallelAndOrdered) {
  TempDir dir;
  Rig rig;
  std::vector<catalog::Item> items;
  for (int i = 0; i < 12; ++i) items.push_back(fx::image_item(dir.path(), "x" + std::to_string(i)));
  std::vector<const catalog::Item*> ptrs;
  for (auto& it : items) ptrs.push_back(&it);
  auto out = rig.make().summarize_all(ptrs, SummaryMode::kFull);
  ASSERT_EQ(out.size(), 12u);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].item_id, items[i].item_id);
  EXPECT_EQ(rig.mock->calls(), 36u);
}

TEST(ItemSummaries, RoundTrip) {
  TempDir dir;
  ItemSummary a{"b", "t", std::string("img"), "u", SummaryMode::kFull, {"w"}};
  ItemSummary b{"a", "t2", std::nullopt, "t2", SummaryMode::kTextOnly, {}};
  write_summaries(dir / "s.jsonl", {a, b});
  auto back = read_summaries(dir / "s.jsonl");
  EXPECT_EQ(back.at("a"), b);
  EXPECT_EQ(back.at("b"), a);
  auto text = read_file(dir / "s.jsonl");
  EXPECT_LT(text.find("\"item_id\":\"a\""), text.find("\"item_id\":\"b\""));
}
