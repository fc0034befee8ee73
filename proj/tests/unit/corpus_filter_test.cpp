// SPDX-License-Identifier: Apache-2.0
#include "helpers.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/corpus_filter.hpp"
#include "tabflow/error.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace tabflow;
using namespace tabflow::corpus;
using testing_support::fixture;

namespace {

CorpusSample sample(std::string answer, std::optional<std::string> reasoning = std::nullopt) {
  CorpusSample s;
  s.id = "x";
  s.question = "q";
  s.answer = std::move(answer);
  s.reasoning = std::move(reasoning);
  s.category = "Data Analysis";
  s.subtask = "Table Outlier Detection";
  return s;
}

std::string repeat(const std::string& phrase, int n) {
  std::string out;
  for (int i = 0; i < n; ++i) out += phrase + " ";
  return out;
}

} // namespace

TEST(FShort, Examples) {
  EXPECT_TRUE(f_short(sample("42")));
  EXPECT_FALSE(f_short(sample("42", "six times seven")));
  EXPECT_FALSE(f_short(sample("the total revenue was 1214")));  // 5 tokens, 26 chars
  const std::string six_tokens_30_chars = "alpha beta gamma delta eps zet";
  ASSERT_EQ(six_tokens_30_chars.size(), 30u);
  EXPECT_FALSE(f_short(sample(six_tokens_30_chars)));
}

TEST(DuplicateNgrams, Examples) {
  EXPECT_EQ(count_duplicate_ngrams(repeat("a b c d e f g h i j", 21), 10), 21u);
  EXPECT_EQ(count_duplicate_ngrams("t1 t2 t3 t4 t5 t6 t7 t8 t9 t10 t11 t12", 10), 1u);
  EXPECT_EQ(count_duplicate_ngrams("too short", 10), 0u);
}

TEST(DuplicateNgrams, MatchesBruteForceWithCollisions) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 200; ++k) {
    std::vector<std::string> tokens;
    const auto len = rng() % 120;
    for (std::size_t i = 0; i < len; ++i) tokens.push_back(std::to_string(rng() % 3));
    const std::size_t n = 1 + rng() % 6;
    EXPECT_EQ(count_duplicate_ngrams(tokens, n, 0x3), oracle::max_ngram_frequency(tokens, n));
  }
}

TEST(FRepeat, Boundary) {
  EXPECT_FALSE(f_repeat(sample("x", repeat("a b c d e f g h i j", 20))));
  EXPECT_TRUE(f_repeat(sample("x", repeat("a b c d e f g h i j", 21))));
}

TEST(FDensity, Examples) {
  const auto& v = default_low_info_vocab();
  for (const char* w : {"the", "of", "and", "to", "in", "a"}) ASSERT_TRUE(v.count(w)) << w;
  EXPECT_TRUE(f_density(sample("x", "the of and to in a revenue growth margin total")));
  EXPECT_FALSE(f_density(sample("x", "the of and to in revenue growth margin ratio total")));
  EXPECT_DOUBLE_EQ(low_info_density("", v), 0.0);
}

TEST(Tokenize, DropsPunctuationAndSplitsCjk) {
  EXPECT_EQ(tokenize("Hello, world! 3.5"), (std::vector<std::string>{"hello", "world", "3", "5"}));
  EXPECT_EQ(tokenize("\xE8\xA1\xA8\xE6\xA0\xBC"), (std::vector<std::string>{"\xE8\xA1\xA8", "\xE6\xA0\xBC"}));
}

TEST(JudgeScore, ParsesForms) {
  EXPECT_EQ(parse_judge_score("Score: 9/10"), 9);
  EXPECT_EQ(parse_judge_score("I'd give it 8.5 out of 10"), 8.5);
  EXPECT_EQ(parse_judge_score("7"), 7);
  EXPECT_FALSE(parse_judge_score("great sample"));
}

TEST(FScore, ThresholdAndRetries) {
  MockBackend low({"Score: 8.4"});
  EXPECT_TRUE(f_score(sample("a"), low).flag);
  MockBackend edge({"Score: 8.5"});
  EXPECT_FALSE(f_score(sample("a"), edge).flag);
  MockBackend retry({"no idea", "Score: 9"});
  EXPECT_EQ(f_score(sample("a"), retry).score, 9);
  MockBackend never({"no idea"}, {}, true);
  try {
    f_score(sample("a"), never);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::JudgeUnparseable);
  }
}

TEST(FilterDataset, ViolatorFixtureRemovesFour) {
  auto samples = read_jsonl(oracle::read_file(fixture("filter/violators.jsonl")));
  auto judge = MockBackend::from_file(fixture("filter/judge.json").string());
  auto r = filter_dataset(samples, FilterConfig{}, *judge);
  ASSERT_EQ(r.retained.size(), 1u);
  EXPECT_EQ(r.retained[0].id, "s1");
  MockBackend unused;
  EXPECT_TRUE(filter_dataset({}, FilterConfig{}, unused).retained.empty());
}

TEST(FilterDataset, UnparseableJudgeGoesToManualReview) {
  MockBackend judge({"no score"}, {}, true);
  auto r = filter_dataset({sample("The answer is forty two units", "because")}, FilterConfig{}, judge);
  EXPECT_TRUE(r.retained.empty());
  EXPECT_EQ(r.report.manual_review.size(), 1u);
}

TEST(CorpusSample, JsonRoundTripAndValidation) {
  auto s = sample("a", "r");
  EXPECT_EQ(CorpusSample::from_json(s.to_json()).to_json(), s.to_json());
  auto bad = s.to_json();
  bad["category"] = "Cooking";
  EXPECT_THROW(CorpusSample::from_json(bad), Error);
  EXPECT_EQ(capability_of("Table Ranking"), "Table Basic Operation");
  EXPECT_EQ(subtasks().size(), 34u);
}

TEST(Balancing, WeightsAndEmptyCategory) {
  std::map<std::string, double> p{{"A", 0.75}, {"B", 0.25}};
  auto w = balancing_weights(p, {{"A", 1}, {"B", 1}});
  EXPECT_DOUBLE_EQ(w["A"], 0.5 / 0.75);
  EXPECT_DOUBLE_EQ(w["B"], 2.0);
  try {
    balancing_weights(p, {{"C", 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCategory);
  }
}

TEST(Balancing, ResampleIsSeeded) {
  std::vector<std::string> cats{"A", "A", "A", "B"};
  auto w = balancing_weights(category_proportions(cats), {{"A", 1}, {"B", 1}});
  EXPECT_EQ(weighted_resample(cats, w, 100, 1), weighted_resample(cats, w, 100, 1));
  EXPECT_NE(weighted_resample(cats, w, 100, 1), weighted_resample(cats, w, 100, 2));
}

TEST(Classify, KeywordThenSemantic) {
  EXPECT_EQ(classify_question("Which product has the highest revenue?").method, "keyword");
  MockBackend semantic({"Sub-task: Table Summary"});
  auto c = classify_question("Give me the gist of this sheet", &semantic);
  EXPECT_EQ(c.method, "semantic");
  EXPECT_EQ(c.subtask, "Table Summary");
  EXPECT_EQ(classify_question("Give me the gist of this sheet").subtask, "unclassified");
  EXPECT_EQ(default_keyword_rules().size(), 21u);
}

TEST(ParseableContent, RejectsImagesAndCorruption) {
  EXPECT_TRUE(is_parseable_content("plain text"));
  EXPECT_FALSE(is_parseable_content(""));
  EXPECT_FALSE(is_parseable_content("![chart](a.png)"));
  EXPECT_FALSE(is_parseable_content("bad \xff bytes"));
}

TEST(QaPipeline, HighWhenJudgeAgrees) {
  MockBackend g1({"42"}), g2({"42"}), g3({"41"});
  MockBackend judge({"Score: 9"});
  QaItem item{"What is six times seven?", "42", "", false};
  auto v = qa_quality_pipeline(item, {&g1, &g2, &g3}, judge);
  EXPECT_EQ(v.tier, QualityTier::High);
  EXPECT_EQ(v.candidates.size(), 3u);
}
