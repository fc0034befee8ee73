// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tabflow/error.hpp"
#include "tabflow/orchestrator.hpp"
#include "tabflow/sensing.hpp"
#include "tabflow/table.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tabflow {

class ModelBackend;
class Sandbox;

namespace synth {

// ---------------------------------------------------------------- complex tables

struct ComplexTableCriteria {
  std::size_t min_rows = 100;  // strictly more rows than this
  std::size_t min_cols = 10;   // strictly more columns than this
  std::size_t min_text_filterable_cols = 2;
  std::size_t min_numeric_nonzero_var_cols = 4;
  double max_missing_frac = 0.80;
  /// Cells longer than this count as noise.
  std::size_t max_cell_chars = 500;
};

struct ComplexReport {
  bool complex = false;
  /// Names of failed criteria: "meaningful_headers", "size", "text_columns",
  /// "numeric_columns", "missing", "noise".
  std::vector<std::string> failures;
  std::size_t text_filterable_cols = 0;
  std::size_t numeric_varying_cols = 0;
  double missing_frac = 0;

  nlohmann::json to_json() const;
};

ComplexReport is_complex_table(const ProcessedTable& t, const ComplexTableCriteria& c = {});

// ---------------------------------------------------------------- question synthesis

/// H_T = {structure, semantics, indicators}.
struct TableContext {
  std::vector<std::string> headers;
  std::vector<ColumnType> types;
  std::string structure;
  std::vector<std::string> semantics;
  std::vector<std::string> indicators;

  bool empty() const { return headers.empty(); }
  std::string render() const;
};

/// Semantics come from `backend` when given (one "column: note" line per
/// column), else echo the headers.
TableContext build_table_context(const ProcessedTable& t, const TableMetadata& o,
                                 ModelBackend* backend = nullptr);

struct InstructionTuple {
  std::string q_type;
  std::string s_source;
  std::string o_task;
  std::string y_format;

  friend bool operator==(const InstructionTuple&, const InstructionTuple&) = default;
  nlohmann::json to_json() const;
};

/// Dimension values and the explicit list of compatible tuples ("ALLOW/1").
struct InstructionAllowList {
  std::vector<std::string> q_types;
  std::vector<std::string> sources;
  std::vector<std::string> tasks;
  std::vector<std::string> formats;
  std::vector<InstructionTuple> allowed;

  bool allows(const InstructionTuple& t) const;
  nlohmann::json to_json() const;
  /// Throws Error(InvalidArgument) for tuples using undeclared values.
  static InstructionAllowList from_json(const nlohmann::json& j);
  static InstructionAllowList load(const std::filesystem::path& file);
  static const InstructionAllowList& builtin();
};

std::vector<InstructionTuple> enumerate_instructions(
    const TableContext& ctx, const InstructionAllowList& allow = InstructionAllowList::builtin());

enum class VerifyStatus { Pending, SemanticOk, ExecOk, Admitted };

std::string_view to_string(VerifyStatus s);

struct SynthQuestion {
  std::string question;
  std::vector<std::string> chain;
  std::string program;
  std::string answer;
  VerifyStatus verify_status = VerifyStatus::Pending;
  InstructionTuple instruction;
  int revisions = 0;

  /// "SYNTH/1" line.
  nlohmann::json to_json() const;
  static SynthQuestion from_json(const nlohmann::json& j);
};

struct SynthesisConfig {
  std::size_t s_min = 3;
  int max_revisions = 2;
};

/// Prompt P = f(I, H_T).
std::string question_prompt(const TableContext& ctx, const InstructionTuple& i, std::size_t s_min);

/// Throws Error(TooShallow) when the chain stays below s_min after the
/// revision rounds, and Error(BackendFailure) from the backend.
SynthQuestion synthesize_question(ModelBackend& backend, const TableContext& ctx,
                                  const InstructionTuple& i, const SynthesisConfig& cfg = {});

class VerificationFailed : public Error {
public:
  VerificationFailed(std::string path, const std::string& reason)
      : Error(ErrorCode::VerificationFailed, path + ": " + reason), path_(std::move(path)) {}
  /// "semantic" or "exec".
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

/// Dual-path check: the critic reviews (Q, S, H_T); the coder compiles S to
/// Python, which runs on the table. Returns the Admitted question with the
/// program and its printed answer. Throws VerificationFailed.
SynthQuestion verify_question(SynthQuestion q, const TableContext& ctx, const TableFiles& tables,
                              ModelBackend& critic, ModelBackend& coder, Sandbox& sandbox,
                              const SynthesisConfig& cfg = {});

// ---------------------------------------------------------------- rule-based QA

/// Question phrasings for one rule sub-task, loaded from
/// `<dir>/<id>.json`: {"subtask": "...", "templates": ["...{num}..."]}.
struct RuleTemplate {
  std::string id;
  std::string subtask;
  std::vector<std::string> templates;
};

class RuleTemplateLibrary {
public:
  static RuleTemplateLibrary load(const std::filesystem::path& dir);
  /// The library shipped in the data directory.
  static const RuleTemplateLibrary& bundled();

  const RuleTemplate& get(const std::string& subtask) const;
  const std::vector<RuleTemplate>& all() const { return templates_; }

private:
  std::vector<RuleTemplate> templates_;
};

/// The ten rule-generated sub-tasks.
const std::vector<std::string>& rule_subtasks();

struct RuleQa {
  std::string subtask;
  std::string question;
  std::string answer;
  /// Self-contained Python reading TABLE_PATH_0 and printing the answer.
  std::string program;
  /// Template parameters: column names, picked values, thresholds.
  nlohmann::json params;

  nlohmann::json to_json() const;
};

/// Up to `count` distinct QA pairs for `subtask`. Throws Error(Ineligible)
/// when the table lacks the needed columns.
std::vector<RuleQa> rule_generate_qa(const ProcessedTable& t, const std::string& subtask,
                                     std::uint64_t seed, std::size_t count = 3,
                                     const RuleTemplateLibrary& lib = RuleTemplateLibrary::bundled());

/// Runs the program on `csv_path` and compares its output with the answer.
bool verify_rule_qa(const RuleQa& qa, const std::string& csv_path, Sandbox& sandbox);

// ---------------------------------------------------------------- LLM-based QA

/// The four LLM-generated sub-tasks.
const std::vector<std::string>& llm_subtasks();

struct LlmQa {
  std::string subtask;
  std::string question;
  std::string answer;
  /// CSV of the generated table in table-less mode.
  std::string table_csv;
};

struct LlmGenResult {
  std::vector<LlmQa> kept;
  /// Reasons for every dropped candidate, in generation order.
  std::vector<std::string> dropped;
};

/// Mode 1 with a table, mode 2 (table and QA generated together) without.
/// A pair is kept only if both discriminators rate it perfect.
LlmGenResult llm_generate_qa(ModelBackend& generator, const std::array<ModelBackend*, 2>& discriminators,
                             const ProcessedTable* table, const std::string& subtask);

/// True for "Verdict: perfect" or a 10/10 score.
bool is_perfect_rating(std::string_view reply);

// ---------------------------------------------------------------- answer synthesis

/// D_T = ({s_1, r_1}, ..., {s_T, r_T}) plus the closing answer turn.
struct ICoTRecord {
  struct Pair {
    std::string thought;
    std::string result;
  };
  std::string question;
  std::vector<Pair> steps;
  std::string final_output;
  std::string answer;
  InteractionMode interaction_mode = InteractionMode::ReAct;

  /// "ICOT/1" document.
  nlohmann::json to_json() const;
};

ICoTRecord record_from_trace(const ReasoningTrace& trace, InteractionMode mode);

struct IterativeOptions {
  int max_steps = 8;
  int max_consecutive_failures = 3;
  InteractionMode interaction = InteractionMode::ReAct;
};

struct IterativeResult {
  Answer answer;
  ICoTRecord record;
  ReasoningTrace trace;
};

/// ICoT session with the assistant profile. Throws Error(Unresolved) when the
/// session ends without an answer.
IterativeResult iterative_answer(ModelBackend& backend, const ToolRegistry& tools,
                                 const std::string& question, const std::vector<TableHandle>& tables,
                                 const IterativeOptions& opts = {});

/// Lower-cased, whitespace-collapsed text; numbers compared with relative
/// tolerance 1e-6.
bool same_answer(std::string_view a, std::string_view b);

struct VoteResult {
  std::string reference;
  std::vector<std::size_t> counts;  // per distinct answer, first-seen order
  bool arbitrated = false;
};

/// Strict plurality; ties go to the judge ("Choice: <n>"). Throws
/// Error(NoMajority) when the judge cannot settle the tie.
VoteResult vote_reference(const std::vector<std::string>& candidates, ModelBackend& judge,
                          const std::string& question);

struct DistillRecord {
  std::string question;
  std::string reference_answer;
  std::vector<std::string> teacher_candidates;
  std::vector<double> student_scores;
  std::size_t best_index = 0;
  ICoTRecord best;
  bool arbitrated = false;

  nlohmann::json to_json() const;
};

struct DistillOptions {
  std::size_t teacher_samples = 5;
  std::size_t student_samples = 5;
  IterativeOptions student;
};

/// Teacher votes fix the reference answer; the student trace most consistent
/// with it (judge "Score: <0..1>") is kept.
DistillRecord distill_select(ModelBackend& teacher, ModelBackend& student, ModelBackend& judge,
                             const ToolRegistry& tools, const std::string& question,
                             const std::vector<TableHandle>& tables, const DistillOptions& opts = {});

} // namespace synth
} // namespace tabflow
