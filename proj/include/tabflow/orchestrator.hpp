// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tabflow/backend.hpp"
#include "tabflow/charttool.hpp"
#include "tabflow/sandbox.hpp"
#include "tabflow/sensing.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace tabflow {

enum class Mode { TCoT, PoT, ICoT };

std::string_view to_string(Mode m);
/// Accepts "tcot", "pot", "icot" in any case.
Mode parse_mode(std::string_view s);

/// How history is presented to the model: one growing transcript (ReAct) or
/// alternating assistant/tool messages (Dialogue).
enum class InteractionMode { ReAct, Dialogue };

std::string_view to_string(InteractionMode m);

inline constexpr std::string_view kFinalAnswerMarker = "Final Answer:";
inline constexpr std::string_view kElided = "[elided]";

struct TableHandle {
  TableMetadata metadata;
  /// CSV file handed to the sandbox.
  std::string path;
};

struct SessionInput {
  std::string query;
  std::vector<TableHandle> tables;
  Mode mode = Mode::ICoT;
  int max_steps = 8;
  std::string prompt_profile = "default";

  /// Throws Error(InvalidArgument) for an empty query, K < 1 or no tables.
  void validate() const;
  TableFiles table_files() const;
};

/// System role text plus switches for the analysis guidance block.
struct PromptProfile {
  std::string name = "default";
  std::string system_role =
      "You act as a data analysis assistant. You answer questions about the tables below "
      "accurately and state your answer explicitly.";
  bool include_guidance = true;

  static PromptProfile from_json(const nlohmann::json& j);
};

/// The profile used for synthesized reasoning traces.
PromptProfile assistant_profile();

struct CodeBlock {
  std::string code;
  std::string language;
};

struct ChartAction {
  nlohmann::json raw;
  chart::ChartCall call;
};

struct FinalAnswer {
  std::string text;
};

struct ThoughtOnly {};

/// A tool call whose JSON failed schema validation; fed back to the model.
struct MalformedToolCall {
  std::string field;
  std::string reason;
};

using Action = std::variant<CodeBlock, ChartAction, FinalAnswer, ThoughtOnly, MalformedToolCall>;

std::string_view action_name(const Action& a);

struct ParsedOutput {
  Action action;
  /// Text preceding the action (the model's visible reasoning).
  std::string thought;
};

/// Recognizes fenced code, chart_tool JSON (fenced, inline, or as a whole
/// Dialogue message), and the final-answer marker. A tool call written
/// before the marker wins over the marker. TCoT ignores tool calls.
ParsedOutput parse_model_output(std::string_view text, Mode mode);

/// r_k: what a tool invocation returned.
struct Observation {
  std::string tool;  // "python", "chart_tool" or "parser"
  bool ok = true;
  std::string text;  // fed back to the model
  std::optional<ToolResult> exec;
  /// Relative path of a rendered chart, and its bytes.
  std::optional<std::string> asset;
  std::string asset_svg;
  double duration = 0;
};

struct Step {
  int index = 0;
  std::string model_output;
  Action action = ThoughtOnly{};
  std::optional<Observation> tool_result;
};

enum class AnswerKind { Value, List, YesNo, Chart, Report };

std::string_view to_string(AnswerKind k);

struct Answer {
  std::string text;
  AnswerKind kind = AnswerKind::Value;
  std::optional<std::string> asset;
};

enum class TraceStatus { Completed, MaxStepsExceeded, ToolFailure, BackendFailure };

std::string_view to_string(TraceStatus s);

struct ReasoningTrace {
  SessionInput input;
  std::vector<Step> steps;
  std::optional<Answer> final;
  TraceStatus status = TraceStatus::MaxStepsExceeded;
  std::string error;

  /// Deterministic "TRACE/1" document: no durations or file paths.
  nlohmann::json to_json() const;
  /// Per-step wall-clock durations, kept apart so traces replay byte-exactly.
  nlohmann::json timings_json() const;
};

/// One TRACE/1 step entry.
nlohmann::json step_to_json(const Step& s);

struct ToolLimits {
  double time_limit = 10.0;
  std::size_t memory_limit_mb = 512;
  std::size_t output_limit_kb = 64;
};

/// Dispatches actions to the code interpreter and the chart renderer.
/// Shareable across sessions.
class ToolRegistry {
public:
  explicit ToolRegistry(std::shared_ptr<Sandbox> sandbox, ToolLimits limits = {});

  Observation run_code(const CodeBlock& code, const TableFiles& tables) const;
  /// Renders into `<artifact_dir>/chart_<step>.svg` when a directory is given.
  Observation run_chart(const ChartAction& chart, int step,
                        const std::optional<std::filesystem::path>& artifact_dir) const;

  Sandbox& sandbox() const { return *sandbox_; }

private:
  std::shared_ptr<Sandbox> sandbox_;
  ToolLimits limits_;
};

struct SessionOptions {
  InteractionMode interaction = InteractionMode::ReAct;
  int max_consecutive_failures = 3;
  PromptProfile profile;
  std::optional<std::filesystem::path> artifact_dir;
  std::string model;
  double temperature = 0.0;
  int max_tokens = 2048;
  /// Called after each step is appended (used for event streaming).
  std::function<void(const Step&)> on_step;
};

/// x = (prompt, q, {O_i}) plus the mode-specific instructions.
std::string build_context(const SessionInput& s, const PromptProfile& profile = {});

/// Messages for the next backend call: the context, then every o_j and r_j
/// in order. Oldest tool outputs become "[elided]" when `token_budget`
/// (bytes / 4) would otherwise be exceeded.
std::vector<ChatMessage> build_messages(const std::string& context, const std::vector<Step>& history,
                                        InteractionMode interaction, std::size_t token_budget = 0);

ReasoningTrace run_session(const SessionInput& s, ModelBackend& backend, const ToolRegistry& tools,
                           const SessionOptions& opts = {});

/// y = Decode(h_K). Throws Error(NoFinalAnswer) for incomplete traces.
Answer decode_answer(const ReasoningTrace& trace);

/// Value, List, YesNo or Report from the answer text alone.
AnswerKind classify_answer(std::string_view text);

} // namespace tabflow
