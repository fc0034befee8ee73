// SPDX-License-Identifier: Apache-2.0
#include "tabflow/orchestrator.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/error.hpp"
#include "tabflow/text_util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <fstream>

namespace tabflow {

namespace {

constexpr std::string_view kGuidance = R"(A good data analysis process may include:

### Understanding stage

1. Understand the table structure, such as the column name may have two rows, the last row is the summary, the last column is the summary, the last row is the dirty data, etc.

2. Understand the problem, such as when the problem is more abstract and vague, should be analyzed into a specific problems.

3. Understand the column meaning related to the problem, such as whether the column name represents the actual value or the ratio.

4. Identify special values in the table, such as columns and rows may have null values, special symbols, commas, etc.

### Solution stage

1. Sort out the solution ideas, such as how to clean the data and how to write the solution code.

2. Calculate the result by hand to judge whether the idea is correct, such as the proportion should not exceed 100%, otherwise the table understanding or problem understanding may be not in place.

3. Summarize the processing process and precautions, which is convenient for reference when writing code later.)";

constexpr std::string_view kChartSyntax =
    R"({"tool": "chart_tool", "chart_type": "bar|line|pie|scatter", "title": "...", )"
    R"("x_label": "...", "y_label": "...", "series": [{"name": "...", "x": [...], "y": [...]}]})";

std::string mode_instructions(const SessionInput& s) {
  std::string out;
  switch (s.mode) {
  case Mode::TCoT:
    out = "Reason step by step in plain text using only the information above. Do not write "
          "code. End with a line of the form \"Final Answer: <answer>\".";
    break;
  case Mode::PoT:
    out = "Write one Python program in a single fenced code block (```python ... ```) that "
          "computes the answer and prints it. After the program output is returned to you, "
          "reply with a line of the form \"Final Answer: <answer>\".";
    break;
  case Mode::ICoT:
    out = "Alternate between a short thought and one action. An action is either a fenced "
          "Python code block (```python ... ```), which is executed and its output returned to "
          "you, or a chart call written as JSON: " +
          std::string(kChartSyntax) +
          ". If code fails, read the error, fix the code and try again. When you are confident, "
          "write \"Final Answer: <answer>\" on its own line.";
    break;
  }
  if (s.mode != Mode::TCoT) {
    out += "\nIn code, table i (counting from 0) is the CSV file whose path is in the "
           "environment variable TABLE_PATH_i:";
    for (std::size_t i = 0; i < s.tables.size(); ++i)
      out += fmt::format("\n- TABLE_PATH_{} holds \"{}\"", i, s.tables[i].metadata.name);
  }
  return out;
}

// Offset, info string and content of each ``` block.
struct Fence {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string info;
  std::string content;
};

std::vector<Fence> find_fences(std::string_view text) {
  std::vector<Fence> fences;
  std::size_t pos = 0;
  std::optional<Fence> open;
  std::vector<std::string> lines;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::size_t line_end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = text.substr(pos, line_end - pos);
    std::string_view stripped = text::trim(line);
    if (stripped.substr(0, 3) == "```") {
      if (!open) {
        open = Fence{pos, 0, text::to_lower(text::trim(stripped.substr(3))), {}};
        lines.clear();
      } else {
        open->end = line_end;
        open->content = text::join(lines, "\n");
        fences.push_back(*open);
        open.reset();
      }
    } else if (open) {
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.emplace_back(line);
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (open) {
    open->end = text.size();
    open->content = text::join(lines, "\n");
    fences.push_back(*open);
  }
  return fences;
}

bool inside(const std::vector<Fence>& fences, std::size_t pos) {
  return std::any_of(fences.begin(), fences.end(),
                     [&](const Fence& f) { return pos >= f.begin && pos < f.end; });
}

// End (exclusive) of the balanced JSON object starting at `start`, if any.
std::optional<std::size_t> balanced_object(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i + 1;
  }
  return std::nullopt;
}

std::optional<std::string> tool_name(const nlohmann::json& j) {
  for (const char* key : {"tool", "name"})
    if (j.contains(key) && j.at(key).is_string()) return j.at(key).get<std::string>();
  if (j.contains("function") && j.at("function").is_object()) return tool_name(j.at("function"));
  return std::nullopt;
}

nlohmann::json tool_arguments(const nlohmann::json& j) {
  const nlohmann::json& base =
      j.contains("function") && j.at("function").is_object() ? j.at("function") : j;
  for (const char* key : {"arguments", "parameters"}) {
    if (!base.contains(key)) continue;
    const auto& a = base.at(key);
    if (a.is_object()) return a;
    if (a.is_string()) {
      auto parsed = nlohmann::json::parse(a.get<std::string>(), nullptr, false);
      if (parsed.is_object()) return parsed;
    }
  }
  return base;
}

// nullopt when the JSON is not a tool call at all.
std::optional<Action> interpret_tool_json(const nlohmann::json& j) {
  if (!j.is_object()) return std::nullopt;
  auto name = tool_name(j);
  if (!name) return std::nullopt;
  auto args = tool_arguments(j);
  if (*name == "chart_tool") {
    try {
      return ChartAction{args, chart::validate_call(args)};
    } catch (const SchemaError& e) {
      return MalformedToolCall{e.field(), e.reason()};
    }
  }
  if (*name == "python" || *name == "code_interpreter" || *name == "python_interpreter") {
    if (!args.contains("code") || !args.at("code").is_string())
      return MalformedToolCall{"code", "expected the program text as a string"};
    return CodeBlock{args.at("code").get<std::string>(), "python"};
  }
  return MalformedToolCall{"tool", "unknown tool '" + *name + "'"};
}

std::optional<Action> interpret_json_text(std::string_view text) {
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    if (text.find("chart_tool") != std::string_view::npos)
      return MalformedToolCall{"$", "tool call is not valid JSON"};
    return std::nullopt;
  }
  return interpret_tool_json(j);
}

std::string strip_markup(std::string_view s) {
  s = text::trim(s);
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    for (std::string_view wrap : {"**", "__", "`", "*"}) {
      while (s.substr(0, wrap.size()) == wrap) {
        s.remove_prefix(wrap.size());
        changed = true;
      }
      while (s.size() >= wrap.size() && s.substr(s.size() - wrap.size()) == wrap) {
        s.remove_suffix(wrap.size());
        changed = true;
      }
    }
    s = text::trim(s);
  }
  return std::string(s);
}

struct Marker {
  std::size_t pos;
  std::string text;
};

std::optional<Marker> find_final_marker(std::string_view text, const std::vector<Fence>& fences) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::size_t line_end = nl == std::string_view::npos ? text.size() : nl;
    if (!inside(fences, pos)) {
      std::string_view line = text.substr(pos, line_end - pos);
      std::size_t skip = 0;
      while (skip < line.size() && std::string_view(" \t*#>-_").find(line[skip]) != std::string_view::npos)
        ++skip;
      if (text::starts_with_icase(line.substr(skip), kFinalAnswerMarker)) {
        std::size_t start = pos + skip + kFinalAnswerMarker.size();
        std::size_t stop = text.size();
        for (const auto& f : fences)
          if (f.begin > start) {
            stop = std::min(stop, f.begin);
          }
        return Marker{pos, strip_markup(text.substr(start, stop - start))};
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return std::nullopt;
}

std::string sanitize_paths(std::string s, const Sandbox& sandbox) {
  const auto root = sandbox.config().work_root.string();
  if (root.empty()) return s;
  // Workdir names are random; drop "<root>/<name>/" so replays match.
  std::size_t pos = 0;
  while ((pos = s.find(root, pos)) != std::string::npos) {
    std::size_t after = pos + root.size();
    if (after < s.size() && s[after] == '/') {
      std::size_t slash = s.find('/', after + 1);
      if (slash != std::string::npos) {
        s.erase(pos, slash + 1 - pos);
        continue;
      }
    }
    pos = after;
  }
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::size_t approx_tokens(const std::vector<ChatMessage>& messages) {
  std::size_t bytes = 0;
  for (const auto& m : messages) bytes += m.content.size();
  return bytes / 4;
}

} // namespace

std::string_view to_string(Mode m) {
  switch (m) {
  case Mode::TCoT: return "tcot";
  case Mode::PoT: return "pot";
  case Mode::ICoT: return "icot";
  }
  return "icot";
}

Mode parse_mode(std::string_view s) {
  auto l = text::to_lower(text::trim(s));
  if (l == "tcot") return Mode::TCoT;
  if (l == "pot") return Mode::PoT;
  if (l == "icot") return Mode::ICoT;
  throw Error(ErrorCode::InvalidArgument, "unknown mode '" + std::string(s) + "' (tcot, pot, icot)");
}

std::string_view to_string(InteractionMode m) {
  return m == InteractionMode::ReAct ? "react" : "dialogue";
}

std::string_view to_string(AnswerKind k) {
  switch (k) {
  case AnswerKind::Value: return "value";
  case AnswerKind::List: return "list";
  case AnswerKind::YesNo: return "yes_no";
  case AnswerKind::Chart: return "chart";
  case AnswerKind::Report: return "report";
  }
  return "value";
}

std::string_view to_string(TraceStatus s) {
  switch (s) {
  case TraceStatus::Completed: return "completed";
  case TraceStatus::MaxStepsExceeded: return "max_steps_exceeded";
  case TraceStatus::ToolFailure: return "tool_failure";
  case TraceStatus::BackendFailure: return "backend_failure";
  }
  return "completed";
}

std::string_view action_name(const Action& a) {
  return std::visit(
      [](const auto& v) -> std::string_view {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, CodeBlock>) return "code";
        else if constexpr (std::is_same_v<T, ChartAction>) return "chart";
        else if constexpr (std::is_same_v<T, FinalAnswer>) return "final";
        else if constexpr (std::is_same_v<T, ThoughtOnly>) return "thought";
        else return "malformed";
      },
      a);
}

void SessionInput::validate() const {
  if (text::trim(query).empty()) throw Error(ErrorCode::InvalidArgument, "query is empty");
  if (max_steps < 1) throw Error(ErrorCode::InvalidArgument, "max_steps must be at least 1");
  if (tables.empty()) throw Error(ErrorCode::InvalidArgument, "a session needs at least one table");
}

TableFiles SessionInput::table_files() const {
  TableFiles files;
  for (const auto& t : tables) files.emplace_back(t.metadata.name, t.path);
  return files;
}

PromptProfile PromptProfile::from_json(const nlohmann::json& j) {
  PromptProfile p;
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "prompt profile must be an object");
  p.name = j.value("name", p.name);
  p.system_role = j.value("system_role", p.system_role);
  p.include_guidance = j.value("include_guidance", p.include_guidance);
  return p;
}

PromptProfile assistant_profile() {
  PromptProfile p;
  p.name = "assistant";
  p.system_role =
      "You act as a data analysis assistant. Solve the question with interleaved reasoning and "
      "Python code. When the code raises an error, diagnose it and regenerate the code.";
  return p;
}

std::string build_context(const SessionInput& s, const PromptProfile& profile) {
  std::string out = profile.system_role + "\n\n";
  if (profile.include_guidance) out += std::string(kGuidance) + "\n\n";
  out += "## Tables\n\n";
  for (const auto& t : s.tables) out += render_metadata(t.metadata) + "\n";
  out += "## Question\n\n" + s.query + "\n\n## Instructions\n\n" + mode_instructions(s) + "\n";
  return out;
}

ParsedOutput parse_model_output(std::string_view text, Mode mode) {
  const auto fences = find_fences(text);
  auto marker = find_final_marker(text, fences);

  std::optional<std::pair<std::size_t, Action>> tool;
  if (mode != Mode::TCoT) {
    auto trimmed = text::trim(text);
    if (!trimmed.empty() && trimmed.front() == '{' && trimmed.back() == '}')
      if (auto a = interpret_json_text(trimmed)) tool.emplace(0, std::move(*a));
    for (std::size_t i = 0; !tool && i < fences.size(); ++i) {
      const auto& f = fences[i];
      auto body = text::trim(f.content);
      const bool json_like = f.info == "json" || (!body.empty() && body.front() == '{');
      if (json_like) {
        if (auto a = interpret_json_text(body)) tool.emplace(f.begin, std::move(*a));
        continue;
      }
      if (f.info.empty() || f.info == "python" || f.info == "py" || f.info == "python3")
        tool.emplace(f.begin, CodeBlock{f.content, "python"});
    }
    if (!tool) {
      std::size_t pos = 0;
      while ((pos = text.find("chart_tool", pos)) != std::string_view::npos) {
        if (!inside(fences, pos)) {
          std::size_t open = text.rfind('{', pos);
          while (open != std::string_view::npos) {
            auto close = balanced_object(text, open);
            if (close && *close > pos) break;
            open = open == 0 ? std::string_view::npos : text.rfind('{', open - 1);
          }
          if (open == std::string_view::npos) {
            tool.emplace(pos, MalformedToolCall{"$", "tool call is not valid JSON"});
          } else if (auto a = interpret_json_text(text.substr(open, *balanced_object(text, open) - open))) {
            tool.emplace(open, std::move(*a));
          }
          if (tool) break;
        }
        pos += 10;
      }
    }
  }

  ParsedOutput out;
  std::size_t at = text.size();
  if (tool && (!marker || tool->first < marker->pos)) {
    out.action = std::move(tool->second);
    at = tool->first;
  } else if (marker) {
    out.action = FinalAnswer{marker->text};
    at = marker->pos;
  } else {
    out.action = ThoughtOnly{};
  }
  out.thought = std::string(text::trim(text.substr(0, at)));
  return out;
}

ToolRegistry::ToolRegistry(std::shared_ptr<Sandbox> sandbox, ToolLimits limits)
    : sandbox_(std::move(sandbox)), limits_(limits) {
  if (!sandbox_) throw Error(ErrorCode::InvalidArgument, "tool registry needs a sandbox");
}

Observation ToolRegistry::run_code(const CodeBlock& code, const TableFiles& tables) const {
  ExecRequest req;
  req.code = code.code;
  req.tables = tables;
  req.time_limit = limits_.time_limit;
  req.memory_limit_mb = limits_.memory_limit_mb;
  req.output_limit_kb = limits_.output_limit_kb;
  auto result = sandbox_->execute(req);
  result.stdout_text = sanitize_paths(std::move(result.stdout_text), *sandbox_);
  result.stderr_text = sanitize_paths(std::move(result.stderr_text), *sandbox_);

  Observation obs;
  obs.tool = "python";
  obs.duration = result.duration;
  obs.ok = !result.failed();
  switch (result.status) {
  case ExecStatus::Ok:
  case ExecStatus::OutputTruncated:
    obs.text = result.stdout_text.empty() ? "(no output)" : result.stdout_text;
    break;
  case ExecStatus::RuntimeError:
    obs.text = fmt::format("Error (exit code {}):\n{}", result.exit_code, result.stderr_text);
    if (!result.stdout_text.empty()) obs.text += "\nOutput before the error:\n" + result.stdout_text;
    break;
  case ExecStatus::Timeout:
    obs.text = fmt::format("Error: execution exceeded the time limit of {} s",
                           text::format_number(limits_.time_limit));
    break;
  }
  obs.exec = std::move(result);
  return obs;
}

Observation ToolRegistry::run_chart(const ChartAction& chart, int step,
                                    const std::optional<std::filesystem::path>& artifact_dir) const {
  Observation obs;
  obs.tool = "chart_tool";
  auto t0 = std::chrono::steady_clock::now();
  try {
    auto asset = chart::render(chart.call);
    std::size_t points = 0;
    for (const auto& s : chart.call.series) points += s.x.size();
    const std::string name = fmt::format("chart_{}.svg", step);
    if (artifact_dir) {
      std::filesystem::create_directories(*artifact_dir);
      std::ofstream out(*artifact_dir / name, std::ios::binary);
      out << asset.svg;
      if (!out) throw Error(ErrorCode::IoError, "cannot write chart " + name);
    }
    obs.asset = name;
    obs.asset_svg = std::move(asset.svg);
    obs.text = fmt::format("Chart rendered: {} ({} chart, {} points, digest {})", name,
                           chart::to_string(chart.call.chart_type), points, asset.data_digest);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoError) throw;
    obs.ok = false;
    obs.text = std::string("Error: ") + e.what();
  }
  obs.duration = seconds_since(t0);
  return obs;
}

std::vector<ChatMessage> build_messages(const std::string& context, const std::vector<Step>& history,
                                        InteractionMode interaction, std::size_t token_budget) {
  std::vector<std::string> observations;
  for (const auto& s : history)
    if (s.tool_result) observations.push_back(s.tool_result->text);

  auto assemble = [&] {
    std::vector<ChatMessage> msgs{{"user", context}};
    std::size_t oi = 0;
    if (interaction == InteractionMode::Dialogue) {
      for (const auto& s : history) {
        msgs.push_back({"assistant", s.model_output});
        if (s.tool_result)
          msgs.push_back({"user", "Observation (" + s.tool_result->tool + "):\n" + observations[oi++]});
      }
      return msgs;
    }
    if (history.empty()) return msgs;
    std::string transcript = "\n## Progress so far\n";
    for (const auto& s : history) {
      transcript += "\n" + s.model_output + "\n";
      if (s.tool_result)
        transcript += "Observation (" + s.tool_result->tool + "):\n" + observations[oi++] + "\n";
    }
    transcript += "\nContinue from here.\n";
    msgs.front().content += transcript;
    return msgs;
  };

  auto msgs = assemble();
  for (std::size_t i = 0; token_budget > 0 && approx_tokens(msgs) > token_budget && i < observations.size();
       ++i) {
    observations[i] = std::string(kElided);
    msgs = assemble();
  }
  return msgs;
}

ReasoningTrace run_session(const SessionInput& s, ModelBackend& backend, const ToolRegistry& tools,
                           const SessionOptions& opts) {
  s.validate();
  ReasoningTrace trace;
  trace.input = s;
  const std::string context = build_context(s, opts.profile);
  const TableFiles files = s.table_files();

  int rounds = s.max_steps;
  if (s.mode == Mode::TCoT) rounds = 1;
  if (s.mode == Mode::PoT) rounds = std::min(rounds, 2);

  int consecutive_failures = 0;
  for (int k = 1; k <= rounds; ++k) {
    ChatRequest req;
    req.model = opts.model;
    req.temperature = opts.temperature;
    req.max_tokens = opts.max_tokens;
    req.messages = build_messages(context, trace.steps, opts.interaction, backend.context_budget());
    std::string output;
    try {
      output = backend.complete(req);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BackendFailure) throw;
      trace.status = TraceStatus::BackendFailure;
      trace.error = e.what();
      return trace;
    }

    // The PoT decode round only reads the answer.
    Mode parse_as = (s.mode == Mode::PoT && k == 2) ? Mode::TCoT : s.mode;
    auto parsed = parse_model_output(output, parse_as);

    Step step;
    step.index = k;
    step.model_output = std::move(output);
    step.action = std::move(parsed.action);
    if (const auto* code = std::get_if<CodeBlock>(&step.action)) {
      step.tool_result = tools.run_code(*code, files);
    } else if (const auto* chart = std::get_if<ChartAction>(&step.action)) {
      step.tool_result = tools.run_chart(*chart, k, opts.artifact_dir);
    } else if (const auto* bad = std::get_if<MalformedToolCall>(&step.action)) {
      Observation obs;
      obs.tool = "parser";
      obs.ok = false;
      obs.text = "Error: invalid tool call: " + bad->field + ": " + bad->reason;
      step.tool_result = std::move(obs);
    }
    if (step.tool_result) consecutive_failures = step.tool_result->ok ? 0 : consecutive_failures + 1;
    const bool final = std::holds_alternative<FinalAnswer>(step.action);
    trace.steps.push_back(std::move(step));
    if (opts.on_step) opts.on_step(trace.steps.back());

    if (final) {
      trace.status = TraceStatus::Completed;
      trace.final = decode_answer(trace);
      return trace;
    }
    if (consecutive_failures >= opts.max_consecutive_failures) {
      trace.status = TraceStatus::ToolFailure;
      trace.error = fmt::format("{} consecutive tool failures", consecutive_failures);
      return trace;
    }
  }
  trace.status = TraceStatus::MaxStepsExceeded;
  return trace;
}

AnswerKind classify_answer(std::string_view raw) {
  auto t = text::trim(raw);
  int lines = 0;
  for (const auto& l : text::split(t, '\n'))
    if (!text::trim(l).empty()) ++lines;
  if (lines > 1 || t.size() > 200) return AnswerKind::Report;
  auto lower = text::to_lower(t);
  while (!lower.empty() && (lower.back() == '.' || lower.back() == '!')) lower.pop_back();
  for (std::string_view w : {"yes", "no", "true", "false"})
    if (lower == w || (lower.size() > w.size() && lower.compare(0, w.size(), w) == 0 &&
                       std::string_view(",;. ").find(lower[w.size()]) != std::string_view::npos))
      return AnswerKind::YesNo;
  if (chart::coerce_number(t)) return AnswerKind::Value;
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') return AnswerKind::List;
  if (t.find(", ") != std::string_view::npos || t.find(';') != std::string_view::npos)
    return AnswerKind::List;
  return AnswerKind::Value;
}

Answer decode_answer(const ReasoningTrace& trace) {
  if (trace.status != TraceStatus::Completed || trace.steps.empty())
    throw Error(ErrorCode::NoFinalAnswer, "trace has no final answer");
  const auto* fa = std::get_if<FinalAnswer>(&trace.steps.back().action);
  if (!fa) throw Error(ErrorCode::NoFinalAnswer, "last step is not a final answer");
  Answer a;
  a.text = strip_markup(fa->text);
  if (trace.steps.size() >= 2) {
    const auto& prev = trace.steps[trace.steps.size() - 2];
    if (std::holds_alternative<ChartAction>(prev.action) && prev.tool_result &&
        prev.tool_result->ok) {
      a.kind = AnswerKind::Chart;
      a.asset = prev.tool_result->asset;
      return a;
    }
  }
  if (a.text.empty()) throw Error(ErrorCode::NoFinalAnswer, "final answer is empty");
  a.kind = classify_answer(a.text);
  return a;
}

nlohmann::json step_to_json(const Step& s) {
  nlohmann::json action = {{"type", action_name(s.action)}};
  if (const auto* c = std::get_if<CodeBlock>(&s.action)) {
    action["code"] = c->code;
    action["language"] = c->language;
  } else if (const auto* ch = std::get_if<ChartAction>(&s.action)) {
    action["call"] = ch->raw;
  } else if (const auto* f = std::get_if<FinalAnswer>(&s.action)) {
    action["text"] = f->text;
  } else if (const auto* m = std::get_if<MalformedToolCall>(&s.action)) {
    action["field"] = m->field;
    action["reason"] = m->reason;
  }
  nlohmann::json step = {{"index", s.index}, {"model_output", s.model_output}, {"action", action}};
  if (s.tool_result) {
    const auto& r = *s.tool_result;
    nlohmann::json obs = {{"tool", r.tool}, {"ok", r.ok}, {"text", r.text}};
    if (r.exec) {
      obs["status"] = to_string(r.exec->status);
      obs["exit_code"] = r.exec->exit_code;
      obs["stdout"] = r.exec->stdout_text;
      obs["stderr"] = r.exec->stderr_text;
    }
    if (r.asset) obs["asset"] = *r.asset;
    step["tool_result"] = std::move(obs);
  } else {
    step["tool_result"] = nullptr;
  }
  return step;
}

nlohmann::json ReasoningTrace::to_json() const {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& t : input.tables)
    tables.push_back({{"name", t.metadata.name},
                      {"rows", t.metadata.rows},
                      {"cols", t.metadata.cols},
                      {"headers", t.metadata.headers}});
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& s : steps) steps_json.push_back(step_to_json(s));
  nlohmann::json j = {{"format", "TRACE/1"},
                      {"input",
                       {{"query", input.query},
                        {"mode", to_string(input.mode)},
                        {"max_steps", input.max_steps},
                        {"prompt_profile", input.prompt_profile},
                        {"tables", tables}}},
                      {"steps", steps_json},
                      {"status", to_string(status)},
                      {"error", error}};
  if (final) {
    j["final"] = {{"text", final->text}, {"kind", to_string(final->kind)}};
    if (final->asset) j["final"]["asset"] = *final->asset;
  } else {
    j["final"] = nullptr;
  }
  return j;
}

nlohmann::json ReasoningTrace::timings_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : steps)
    out.push_back({{"index", s.index}, {"duration", s.tool_result ? s.tool_result->duration : 0.0}});
  return out;
}

} // namespace tabflow
