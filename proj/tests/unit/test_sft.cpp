#include <gtest/gtest.h>

#include <cmath>

#include "msr/error.hpp"
#include "msr/sft.hpp"
#include "test_support.hpp"

using namespace msr;
using namespace msr::sft;
using msr::fx::TempDir;

namespace {

struct World {
  catalog::Catalog cat;
  std::vector<catalog::Split> splits;
  std::map<std::string, std::string> prefs;
};

World world(std::size_t users, int fold_of_all = 1) {
  World w;
  std::vector<catalog::Interaction> xs;
  auto items = fx::plain_items(80);
  for (std::size_t u = 0; u < users; ++u) {
    const std::string id = "u" + std::to_string(1000 + u);
    catalog::Split s;
    s.fold = fold_of_all;
    s.user_id = id;
    for (std::size_t k = 0; k < 6; ++k) {
      const auto& item = items[(u * 7 + k) % 80].item_id;
      xs.push_back({id, item, static_cast<std::int64_t>(k)});
      if (k < 5)
        s.history.push_back(item);
      else
        s.target = item;
    }
    w.splits.push_back(s);
    w.prefs[id] = "preference of " + id;
  }
  w.cat = catalog::Catalog::build(items, xs, {0, 0});
  return w;
}

struct Rig {
  std::shared_ptr<gateway::MockBackend> mock;
  std::shared_ptr<gateway::Gateway> gw;
  recommender::Recommender rec;
  explicit Rig(gateway::MockBehavior b = gateway::MockBehavior::hash_text())
      : mock(gateway::mock_backend(1, std::move(b))),
        gw(fx::mock_gateway(mock)),
        rec(*gw, prompts::TemplateSet::defaults(), {}) {}
};

}  // namespace

TEST(SftDataset, ExampleCountsFollowRatio) {
  auto w = world(100);
  Rig rig;
  EXPECT_EQ(build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 1, 7, 0).examples.size(), 200u);
  EXPECT_EQ(build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 3, 7, 0).examples.size(), 400u);
  EXPECT_EQ(rig.mock->calls(), 0u);
}

TEST(SftDataset, ExcludesEvaluationFoldUsers) {
  auto w = world(10);
  for (std::size_t i = 0; i < 4; ++i) w.splits[i].fold = 0;
  Rig rig;
  auto ds = build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 1, 7, 0);
  EXPECT_EQ(ds.examples.size(), 12u);
  for (const auto& ex : ds.examples) {
    EXPECT_NE(ex.provenance.user_id, w.splits[0].user_id);
    EXPECT_EQ(ex.provenance.fold, 0);
  }
}

TEST(SftDataset, LabelsAndNegativesAreConsistent) {
  auto w = world(30);
  Rig rig;
  auto ds = build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 2, 7, 0);
  std::map<std::string, int> positives;
  for (const auto& ex : ds.examples) {
    const auto& split = *std::find_if(w.splits.begin(), w.splits.end(),
                                      [&](auto& s) { return s.user_id == ex.provenance.user_id; });
    ASSERT_EQ(ex.conversation.back().role, "assistant");
    ASSERT_EQ(ex.conversation.back().text, to_string(ex.label));
    ASSERT_EQ(ex.conversation.size(), 3u);
    if (ex.label == Label::kYes) {
      ++positives[ex.provenance.user_id];
      EXPECT_EQ(ex.provenance.item_id, split.target);
      EXPECT_FALSE(ex.provenance.is_negative);
    } else {
      EXPECT_TRUE(ex.provenance.is_negative);
      EXPECT_FALSE(w.cat.interacted(split.user_id).contains(ex.provenance.item_id));
    }
    EXPECT_NE(ex.conversation[1].text.find(w.prefs.at(ex.provenance.user_id)), std::string::npos);
  }
  EXPECT_EQ(positives.size(), 30u);
}

TEST(SftDataset, DeterministicBytes) {
  auto w = world(40);
  Rig rig;
  auto a = serialize(build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 1, 7, 0));
  auto b = serialize(build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 1, 7, 0));
  auto c = serialize(build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 1, 8, 0));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SftDataset, FileFormatRoundTrip) {
  TempDir dir;
  auto w = world(12);
  Rig rig;
  auto ds = build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 1, 3, 0);
  write_file_atomic(dir / "d.jsonl", serialize(ds));
  auto back = parse_dataset(dir / "d.jsonl");
  EXPECT_EQ(back.examples, ds.examples);
  EXPECT_EQ(back.meta.train_ratio, 1u);
  EXPECT_EQ(back.meta.seed, 3u);

  auto header = json::parse(read_file(dir / "d.jsonl").substr(0, read_file(dir / "d.jsonl").find('\n')));
  EXPECT_EQ(header["schema_version"], 1);
  const auto& h = header["recommended_hyperparams"];
  EXPECT_EQ(h["lora_rank"], 8);
  EXPECT_EQ(h["learning_rate"], 2e-5);
  EXPECT_EQ(h["batch_size"], 1);
  EXPECT_EQ(h["gradient_accumulation_steps"], 8);
  EXPECT_EQ(h["epochs"], 10);
  EXPECT_EQ(h["max_token_length"], 512);
}

TEST(SftDataset, ParseRejectsInconsistentRecords) {
  TempDir dir;
  fx::write_text(dir / "no_header.jsonl", "");
  EXPECT_THROW(parse_dataset(dir / "no_header.jsonl"), InputError);
  const std::string header = R"({"schema_version":1,"train_ratio":1,"seed":1,"fold":0})" "\n";
  fx::write_text(dir / "bad_label.jsonl",
                      header + R"({"id":"x","conversation":[{"role":"user","text":"q"},{"role":"assistant","text":"yes"}],"images":[],"label":"no","provenance":{"user_id":"u","item_id":"i","fold":0,"is_negative":true}})" "\n");
  EXPECT_THROW(parse_dataset(dir / "bad_label.jsonl"), InputError);
  fx::write_text(dir / "v2.jsonl", R"({"schema_version":2,"train_ratio":1,"seed":1})" "\n");
  EXPECT_THROW(parse_dataset(dir / "v2.jsonl"), InputError);
}

TEST(SftDataset, MissingPreferenceIsDependencyError) {
  auto w = world(5);
  w.prefs.erase(w.splits[2].user_id);
  Rig rig;
  EXPECT_THROW(build_sft_dataset(w.splits, w.prefs, w.cat, rig.rec, 1, 7, 0), DependencyError);
}

TEST(TeacherForced, UniformLogprobFourTokens) {
  Rig rig(gateway::MockBehavior::uniform_logprob(std::log(2.0)));
  gateway::CompletionRequest req;
  req.role = gateway::Role::kRecommenderMllm;
  req.messages = {{gateway::Speaker::kUser, "prompt text"}};
  req.options.teacher_forced_completion = "one two three four";
  auto r = rig.gw->teacher_forced_logprobs(req);
  ASSERT_TRUE(r.token_logprobs);
  ASSERT_EQ(r.token_logprobs->size(), 4u);
  double loss = 0;
  for (double lp : *r.token_logprobs) loss -= lp;
  EXPECT_NEAR(loss, 4 * std::log(2.0), 1e-9);
  req.options.loss_span = gateway::LossSpan::kFull;
  EXPECT_EQ(rig.gw->teacher_forced_logprobs(req).token_logprobs->size(), 6u);
}

TEST(TeacherForced, RequiresCompletion) {
  Rig rig;
  gateway::CompletionRequest req;
  req.role = gateway::Role::kRecommenderMllm;
  req.messages = {{gateway::Speaker::kUser, "q"}};
  EXPECT_THROW(rig.gw->teacher_forced_logprobs(req), RequestError);
  req.options.teacher_forced_completion = "";
  EXPECT_THROW(rig.gw->teacher_forced_logprobs(req), RequestError);
}

TEST(EvalLoss, OracleGivesZeroAndUniformGivesLn2) {
  auto w = world(20);
  std::set<std::string> positives;
  for (const auto& s : w.splits) positives.insert(gateway::probe_key(s.user_id, s.target));
  Rig builder;
  auto ds = build_sft_dataset(w.splits, w.prefs, w.cat, builder.rec, 1, 7, 0);

  Rig oracle(gateway::MockBehavior::oracle_yes(1.0, positives));
  auto zero = eval_sft_loss(ds.examples, *oracle.gw);
  EXPECT_EQ(zero.mean, 0.0);
  EXPECT_EQ(oracle.mock->calls(), 40u);

  Rig uniform(gateway::MockBehavior::uniform_logprob(std::log(2.0)));
  auto ln2 = eval_sft_loss(ds.examples, *uniform.gw);
  EXPECT_NEAR(ln2.mean, std::log(2.0), 1e-12);
  EXPECT_TRUE(std::is_sorted(ln2.per_example.begin(), ln2.per_example.end()));
}

TEST(EvalLoss, AnInvertedOracleIsPenalized) {
  auto w = world(10);
  Rig builder;
  auto ds = build_sft_dataset(w.splits, w.prefs, w.cat, builder.rec, 1, 7, 0);
  Rig wrong(gateway::MockBehavior::oracle_yes(0.9, {}));
  auto r = eval_sft_loss(ds.examples, *wrong.gw);
  // Half the examples are positives scored at ln(0.1), the rest negatives at ln(0.9).
  EXPECT_NEAR(r.mean, -(std::log(0.1) + std::log(0.9)) / 2, 1e-12);
}
