#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "msr/error.hpp"
#include "test_support.hpp"

using namespace msr;

TEST(Hashing, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hashing, Base64) {
  const std::string s = "foobar";
  std::vector<std::uint8_t> bytes(s.begin(), s.end());
  EXPECT_EQ(base64_encode(bytes), "Zm9vYmFy");
  bytes.pop_back();
  EXPECT_EQ(base64_encode(bytes), "Zm9vYmE=");
  EXPECT_EQ(base64_encode({}), "");
}

TEST(SeededRng, SameSeedSameStream) {
  SeededRng a(99), b(99), c(100);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(SeededRng, BelowStaysInRangeAndCoversIt) {
  SeededRng rng(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(SeededRng, UnitInHalfOpenInterval) {
  SeededRng rng(5);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.unit();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.01);
}

TEST(SeededRng, ShuffleIsPermutation) {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  SeededRng rng(11);
  auto w = v;
  rng.shuffle(w);
  EXPECT_NE(w, v);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(w, v);
}

TEST(DeriveSeed, StreamsAreIndependent) {
  EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
}

TEST(Text, TrimLowerWords) {
  EXPECT_EQ(trim("  Yes \n"), "Yes");
  EXPECT_EQ(to_lower(" YeS"), " yes");
  EXPECT_EQ(split_words(" a  bb\tc\n"), (std::vector<std::string>{"a", "bb", "c"}));
  EXPECT_EQ(word_count(""), 0u);
}

TEST(Tokens, EstimateIsCeilOfCharsOverRatio) {
  EXPECT_EQ(estimate_tokens("", 4), 0u);
  EXPECT_EQ(estimate_tokens("abc", 4), 1u);
  EXPECT_EQ(estimate_tokens("abcd", 4), 1u);
  EXPECT_EQ(estimate_tokens("abcde", 4), 2u);
  EXPECT_EQ(estimate_tokens(std::string(2048, 'x'), 4), 512u);
  EXPECT_EQ(estimate_tokens(std::string(2049, 'x'), 4), 513u);
  EXPECT_EQ(estimate_tokens("abcdef", 3), 2u);
}

TEST(Tokens, TruncateRespectsBudgetAtWordBoundary) {
  std::string text;
  for (int i = 0; i < 400; ++i) text += "word" + std::to_string(i) + " ";
  auto cut = truncate_to_tokens(text, 512, 4);
  EXPECT_LE(estimate_tokens(cut, 4), 512u);
  auto shorter = truncate_to_tokens(text, 20, 4);
  EXPECT_LE(estimate_tokens(shorter, 4), 20u);
  EXPECT_EQ(text.find(shorter), 0u);
  EXPECT_NE(shorter.back(), ' ');
  EXPECT_EQ(truncate_to_tokens("short", 10, 4), "short");
}

TEST(Files, AtomicWriteLeavesNoTempFiles) {
  fx::TempDir dir;
  auto target = dir / "sub/out.txt";
  write_file_atomic(target, "one");
  write_file_atomic(target, "two");
  EXPECT_EQ(read_file(target), "two");
  std::size_t entries = 0;
  for (auto& e : std::filesystem::directory_iterator(target.parent_path())) {
    (void)e;
    ++entries;
  }
  EXPECT_EQ(entries, 1u);
}

TEST(Files, ConcurrentAtomicWritersNeverTear) {
  fx::TempDir dir;
  auto target = dir / "shared.txt";
  const std::string a(100000, 'a'), b(100000, 'b');
  std::vector<std::jthread> writers;
  std::atomic<bool> torn{false};
  for (int t = 0; t < 4; ++t)
    writers.emplace_back([&, t] {
      for (int i = 0; i < 20; ++i) write_file_atomic(target, t % 2 ? a : b);
    });
  std::jthread reader([&] {
    for (int i = 0; i < 200; ++i) {
      if (!std::filesystem::exists(target)) continue;
      auto s = read_file(target);
      if (s != a && s != b) torn = true;
    }
  });
  writers.clear();
  reader.join();
  EXPECT_FALSE(torn);
}

TEST(Files, MissingFileIsDependencyError) {
  EXPECT_THROW(read_file("/nonexistent/msr/file"), DependencyError);
}

TEST(Jsonl, MalformedLineNamesFileAndLine) {
  fx::TempDir dir;
  auto f = dir / "x.jsonl";
  fx::write_text(f, "{\"a\":1}\n\n{oops\n");
  try {
    read_jsonl(f, [](std::size_t, const json&) {});
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("x.jsonl:3"), std::string::npos);
  }
}

TEST(ParallelFor, CoversAllIndicesAndPropagatesErrors) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 8, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 37) throw InputError("boom");
                            }),
               InputError);
}

TEST(Errors, ExitCodes) {
  EXPECT_EQ(exit_code_for(ErrorKind::kInput), 1);
  EXPECT_EQ(exit_code_for(ErrorKind::kConfig), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::kDependency), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::kBackend), 4);
}
