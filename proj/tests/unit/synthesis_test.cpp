// SPDX-License-Identifier: Apache-2.0
#include "helpers.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/error.hpp"
#include "tabflow/synthesis.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace tabflow;
using namespace tabflow::synth;

namespace {

struct SynthFixture : ::testing::Test {
  testing_support::TempDir dir{"synth"};
  std::shared_ptr<Sandbox> sandbox;
  void SetUp() override {
    SandboxConfig sc;
    sc.work_root = dir / "sandbox";
    sandbox = std::make_shared<Sandbox>(sc);
  }
};

ProcessedTable wide_table(std::size_t rows, std::size_t cols) {
  ProcessedTable t;
  for (std::size_t c = 0; c < cols; ++c) t.header.push_back(c < 2 ? "Label" + std::to_string(c) : "Metric" + std::to_string(c));
  for (std::size_t r = 0; r < rows; ++r) {
    Row row;
    for (std::size_t c = 0; c < cols; ++c)
      row.push_back(c < 2 ? CellValue::text(std::string(1, static_cast<char>('A' + (r + c) % 4)))
                          : CellValue::number(static_cast<double>((r * (c + 3)) % 97)));
    t.body.push_back(row);
  }
  t.units.assign(cols, std::nullopt);
  return t;
}

} // namespace

TEST(ComplexTable, Criteria) {
  EXPECT_TRUE(is_complex_table(wide_table(101, 11)).complex);
  auto small = is_complex_table(wide_table(100, 11));
  EXPECT_FALSE(small.complex);
  EXPECT_NE(std::find(small.failures.begin(), small.failures.end(), "size"), small.failures.end());
  auto synthetic = wide_table(120, 12);
  synthetic.header[0] = "col0";
  EXPECT_FALSE(is_complex_table(synthetic).complex);
  auto noisy = wide_table(120, 12);
  noisy.body[5][0] = CellValue::text(std::string(600, 'x'));
  auto nr = is_complex_table(noisy);
  EXPECT_NE(std::find(nr.failures.begin(), nr.failures.end(), "noise"), nr.failures.end());
}

TEST(AllowList, BuiltinMatchesDataFileAndRejectsUnknownValues) {
  auto file = InstructionAllowList::load(std::filesystem::path(TABFLOW_DATA_DIR) / "instruction_allowlist.json");
  EXPECT_EQ(file.to_json(), InstructionAllowList::builtin().to_json());
  EXPECT_EQ(file.allowed.size(), 16u);
  auto j = file.to_json();
  j["allow"][0][0] = "nonsense";
  EXPECT_THROW(InstructionAllowList::from_json(j), Error);
}

TEST(Instructions, OnlyAllowedTuples) {
  auto t = wide_table(20, 5);
  auto ctx = build_table_context(t, sense(t));
  auto tuples = enumerate_instructions(ctx);
  EXPECT_FALSE(tuples.empty());
  for (const auto& i : tuples) EXPECT_TRUE(InstructionAllowList::builtin().allows(i));
}

TEST(QuestionSynthesis, RevisesThenGivesUp) {
  auto t = wide_table(20, 5);
  auto ctx = build_table_context(t, sense(t));
  auto tuple = enumerate_instructions(ctx).front();
  MockBackend revise({R"({"question": "Q?", "steps": ["a", "b"]})", R"({"question": "Q?", "steps": ["a", "b", "c"]})"});
  auto q = synthesize_question(revise, ctx, tuple);
  EXPECT_EQ(q.chain.size(), 3u);
  EXPECT_EQ(q.revisions, 1);
  MockBackend shallow({R"({"question": "Q?", "steps": ["a"]})"}, {}, true);
  try {
    synthesize_question(shallow, ctx, tuple);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooShallow);
  }
  EXPECT_EQ(shallow.call_count(), 3u);
}

TEST_F(SynthFixture, VerificationPaths) {
  auto t = wide_table(20, 5);
  auto handle = testing_support::stage(t, dir / "t.csv");
  auto ctx = build_table_context(t, handle.metadata);
  SynthQuestion q;
  q.question = "How many rows are there?";
  q.chain = {"open the table", "count the rows", "report the count"};
  const TableFiles files{{"table", handle.path}};
  MockBackend pass({"Verdict: pass"}, {}, true), fail({"Verdict: fail"}, {}, true);
  MockBackend coder({"```python\nimport csv, os\nprint(len(list(csv.reader(open(os.environ['TABLE_PATH_0'])))) - 1)\n```"});
  auto ok = verify_question(q, ctx, files, pass, coder, *sandbox);
  EXPECT_EQ(ok.verify_status, VerifyStatus::Admitted);
  EXPECT_EQ(ok.answer, "20");
  try {
    verify_question(q, ctx, files, fail, coder, *sandbox);
    FAIL();
  } catch (const VerificationFailed& e) {
    EXPECT_EQ(e.path(), "semantic");
  }
  MockBackend broken({"```python\nraise RuntimeError('x')\n```"});
  try {
    verify_question(q, ctx, files, pass, broken, *sandbox);
    FAIL();
  } catch (const VerificationFailed& e) {
    EXPECT_EQ(e.path(), "exec");
  }
}

TEST_F(SynthFixture, RuleQaMatchesOracleAndProgram) {
  std::mt19937_64 rng(3);
  auto t = testing_support::rule_table(rng, true);
  const auto csv = dir / "rules.csv";
  oracle::write_file(csv, serialize_csv(t));
  const auto text = oracle::read_file(csv);
  for (const auto& subtask : rule_subtasks()) {
    auto qas = rule_generate_qa(t, subtask, 9, 1);
    ASSERT_FALSE(qas.empty()) << subtask;
    EXPECT_EQ(oracle::evaluate_rule(subtask, qas[0].params, text), qas[0].answer) << subtask;
    EXPECT_TRUE(verify_rule_qa(qas[0], csv.string(), *sandbox)) << subtask;
  }
}

TEST(RuleQa, IneligibleWithoutNumbers) {
  ProcessedTable t;
  t.header = {"Name"};
  t.body = {{CellValue::text("a")}, {CellValue::text("b")}};
  t.units = {std::nullopt};
  try {
    rule_generate_qa(t, "Table Correlation Analysis", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Ineligible);
  }
  EXPECT_EQ(rule_subtasks().size(), 10u);
  EXPECT_EQ(RuleTemplateLibrary::bundled().all().size(), 10u);
}

TEST(LlmQa, KeepsOnlyPairsBothDiscriminatorsRatePerfect) {
  ProcessedTable t;
  t.header = {"Item", "Cost"};
  t.body = {{CellValue::text("Rent"), CellValue::number(1214)}, {CellValue::text("Food"), CellValue::number(950)}};
  t.units = {std::nullopt, std::nullopt};
  MockBackend gen({R"({"qa": [{"question": "Total cost?", "answer": "2164"}, {"question": "Cheapest?", "answer": "Food"}]})"});
  MockBackend d1({"Verdict: perfect"}, {}, true);
  MockBackend d2({"Verdict: perfect", "Verdict: imperfect"});
  auto r = llm_generate_qa(gen, {&d1, &d2}, &t, "Table General Operations");
  ASSERT_EQ(r.kept.size(), 1u);
  EXPECT_EQ(r.kept[0].answer, "2164");
  EXPECT_EQ(r.dropped.size(), 1u);
  EXPECT_TRUE(is_perfect_rating("Score: 10/10"));
  EXPECT_FALSE(is_perfect_rating("Verdict: not perfect"));
}

TEST(Answers, SameAnswerAndVoting) {
  EXPECT_TRUE(same_answer("  -5.60% ", "-5.6%"));
  EXPECT_TRUE(same_answer("Paris", "paris"));
  EXPECT_FALSE(same_answer("3", "4"));
  MockBackend judge({"Choice: 2"});
  auto plain = vote_reference({"3", "3", "4"}, judge, "q");
  EXPECT_EQ(plain.reference, "3");
  EXPECT_FALSE(plain.arbitrated);
  auto tie = vote_reference({"3", "4"}, judge, "q");
  EXPECT_EQ(tie.reference, "4");
  EXPECT_TRUE(tie.arbitrated);
  MockBackend unsure({"no idea"}, {}, true);
  try {
    vote_reference({"3", "4"}, unsure, "q");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoMajority);
  }
}

TEST_F(SynthFixture, DistillKeepsBestStudentTrace) {
  auto t = testing_support::load_processed(testing_support::fixture("tables/three_rows.csv"));
  auto handle = testing_support::stage(t, dir / "three.csv", "three");
  ToolRegistry tools(sandbox);
  MockBackend teacher({"Final Answer: 3", "Final Answer: 3", "Final Answer: 4"});
  MockBackend student({"Final Answer: 4", "Final Answer: 3"});
  MockBackend judge({"Score: 0.1", "Score: 0.9"});
  DistillOptions opts;
  opts.teacher_samples = 3;
  opts.student_samples = 2;
  auto rec = distill_select(teacher, student, judge, tools, "How many rows?", {handle}, opts);
  EXPECT_EQ(rec.reference_answer, "3");
  EXPECT_EQ(rec.best_index, 1u);
  EXPECT_EQ(rec.best.answer, "3");
  EXPECT_EQ(rec.to_json()["format"], "DISTILL/1");
}

TEST_F(SynthFixture, IterativeAnswerRecord) {
  auto t = testing_support::load_processed(testing_support::fixture("tables/three_rows.csv"));
  auto handle = testing_support::stage(t, dir / "three.csv", "three");
  ToolRegistry tools(sandbox);
  auto backend = MockBackend::from_file(testing_support::fixture("tables/two_step_script.json").string());
  auto res = iterative_answer(*backend, tools, "How many rows?", {handle});
  EXPECT_EQ(res.answer.text, "3");
  EXPECT_EQ(res.record.steps.size(), 1u);
  EXPECT_EQ(res.record.to_json()["format"], "ICOT/1");
  MockBackend stuck({"thinking"}, {}, true);
  try {
    iterative_answer(stuck, tools, "How many rows?", {handle});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unresolved);
  }
}
