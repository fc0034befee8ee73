// SPDX-License-Identifier: Apache-2.0
#include "tabflow/synthesis.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/corpus_filter.hpp"
#include "tabflow/sandbox.hpp"
#include "tabflow/text_util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#ifndef TABFLOW_DATA_DIR
#define TABFLOW_DATA_DIR "data"
#endif

namespace tabflow::synth {

namespace {

bool is_missing(const CellValue& c) {
  return c.is_null() || (c.is_text() && text::trim(c.as_text()).empty());
}

std::vector<CellValue> column_values(const ProcessedTable& t, std::size_t c) {
  std::vector<CellValue> v;
  v.reserve(t.body.size());
  for (const auto& row : t.body) v.push_back(row[c]);
  return v;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// First JSON object embedded in a model reply.
std::optional<nlohmann::json> extract_json_object(std::string_view reply) {
  for (std::size_t open = reply.find('{'); open != std::string_view::npos;
       open = reply.find('{', open + 1)) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = open; i < reply.size(); ++i) {
      char c = reply[i];
      if (in_string) {
        if (c == '\\') ++i;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        auto j = nlohmann::json::parse(reply.substr(open, i + 1 - open), nullptr, false);
        if (!j.is_discarded() && j.is_object()) return j;
        break;
      }
    }
  }
  return std::nullopt;
}

std::string py_str(const std::string& s) { return nlohmann::json(s).dump(); }

std::string ask(ModelBackend& backend, const std::string& prompt) {
  ChatRequest req;
  req.messages = {{"user", prompt}};
  return backend.complete(req);
}

std::string tail(const std::string& s, std::size_t n) {
  return s.size() <= n ? s : "..." + s.substr(s.size() - n);
}

} // namespace

// ---------------------------------------------------------------- complex tables

nlohmann::json ComplexReport::to_json() const {
  return {{"complex", complex},
          {"failures", failures},
          {"text_filterable_cols", text_filterable_cols},
          {"numeric_varying_cols", numeric_varying_cols},
          {"missing_frac", missing_frac}};
}

ComplexReport is_complex_table(const ProcessedTable& t, const ComplexTableCriteria& c) {
  ComplexReport r;
  const std::size_t rows = t.body.size();
  const std::size_t cols = t.header.size();

  static const std::regex synthetic(R"(col[0-9]+(_[0-9]+)?)");
  bool meaningful = cols > 0;
  for (const auto& h : t.header) {
    auto name = text::trim(h);
    if (name.empty() || std::regex_match(std::string(name), synthetic) || text::parse_number(name))
      meaningful = false;
  }
  if (!meaningful) r.failures.push_back("meaningful_headers");
  if (!(rows > c.min_rows && cols > c.min_cols)) r.failures.push_back("size");

  std::size_t missing = 0;
  bool noisy = false;
  for (std::size_t col = 0; col < cols; ++col) {
    auto values = column_values(t, col);
    auto type = infer_column_type(values);
    std::set<std::string> distinct;
    std::size_t present = 0;
    std::vector<double> nums;
    for (const auto& v : values) {
      if (is_missing(v)) {
        ++missing;
        continue;
      }
      ++present;
      auto s = v.to_text();
      distinct.insert(s);
      if (auto x = numeric_value(v)) nums.push_back(*x);
      if (v.is_text()) {
        if (corpus::char_length(s) > c.max_cell_chars || !corpus::is_parseable_content(s) ||
            s.find("\xC3\x83\xC2") != std::string::npos || s.find("\xC3\x82\xC2") != std::string::npos)
          noisy = true;
      }
    }
    if ((type == ColumnType::Categorical || type == ColumnType::Textual) && distinct.size() >= 2 &&
        distinct.size() < present)
      ++r.text_filterable_cols;
    if (type == ColumnType::Numerical && nums.size() >= 2) {
      double mean = 0;
      for (double x : nums) mean += x;
      mean /= static_cast<double>(nums.size());
      double var = 0;
      for (double x : nums) var += (x - mean) * (x - mean);
      if (var > 0) ++r.numeric_varying_cols;
    }
  }
  r.missing_frac = rows * cols == 0 ? 1.0 : static_cast<double>(missing) / static_cast<double>(rows * cols);
  if (r.text_filterable_cols < c.min_text_filterable_cols) r.failures.push_back("text_columns");
  if (r.numeric_varying_cols < c.min_numeric_nonzero_var_cols) r.failures.push_back("numeric_columns");
  if (r.missing_frac > c.max_missing_frac) r.failures.push_back("missing");
  if (noisy) r.failures.push_back("noise");
  r.complex = r.failures.empty();
  return r;
}

// ---------------------------------------------------------------- question synthesis

std::string TableContext::render() const {
  std::string out = "Structure:\n" + structure + "\nSemantics:\n";
  for (const auto& s : semantics) out += "- " + s + "\n";
  out += "Indicators:\n";
  if (indicators.empty()) out += "- none\n";
  for (const auto& i : indicators) out += "- " + i + "\n";
  return out;
}

TableContext build_table_context(const ProcessedTable& t, const TableMetadata& o, ModelBackend* backend) {
  TableContext ctx;
  ctx.headers = o.headers;
  ctx.types = o.types;
  ctx.structure = fmt::format("rows: {}, columns: {}\n", o.rows, o.cols);
  for (std::size_t i = 0; i < o.headers.size(); ++i) {
    ctx.structure += "- " + o.headers[i] + " (" + std::string(to_string(o.types[i]));
    if (i < o.units.size() && o.units[i]) ctx.structure += ", unit " + *o.units[i];
    ctx.structure += ")\n";
  }
  // Column groups from merged-header names such as "Sales_2016", "Sales_2017".
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& h : o.headers)
    if (auto us = h.find('_'); us != std::string::npos && us > 0) groups[h.substr(0, us)].push_back(h);
  for (const auto& [g, members] : groups)
    if (members.size() >= 2) ctx.structure += "- group " + g + ": " + text::join(members, ", ") + "\n";

  ctx.semantics = o.headers;
  if (backend) {
    std::string prompt = "Describe in a few words what each column of this table means and how "
                         "columns relate. Reply with one line per column as '<column>: <note>'.\n\n" +
                         render_metadata(o);
    auto reply = ask(*backend, prompt);
    for (const auto& line : text::split(reply, '\n')) {
      auto l = text::trim(line);
      while (!l.empty() && (l.front() == '-' || l.front() == '*' || l.front() == ' ')) l.remove_prefix(1);
      auto colon = l.find(':');
      if (colon == std::string_view::npos) continue;
      auto name = text::trim(l.substr(0, colon));
      auto note = text::trim(l.substr(colon + 1));
      for (std::size_t i = 0; i < o.headers.size(); ++i)
        if (o.headers[i] == name && !note.empty()) ctx.semantics[i] = o.headers[i] + ": " + std::string(note);
    }
  }

  for (std::size_t i = 0; i < o.headers.size(); ++i) {
    if (o.types[i] != ColumnType::Numerical) continue;
    ctx.indicators.push_back("mean of " + o.headers[i]);
    ctx.indicators.push_back("ratio of " + o.headers[i] + " to its column total");
    if (t.body.size() >= 2) ctx.indicators.push_back("growth rate of " + o.headers[i]);
  }
  return ctx;
}

nlohmann::json InstructionTuple::to_json() const {
  return {{"q_type", q_type}, {"s_source", s_source}, {"o_task", o_task}, {"y_format", y_format}};
}

bool InstructionAllowList::allows(const InstructionTuple& t) const {
  return std::find(allowed.begin(), allowed.end(), t) != allowed.end();
}

nlohmann::json InstructionAllowList::to_json() const {
  nlohmann::json allow = nlohmann::json::array();
  for (const auto& t : allowed) allow.push_back({t.q_type, t.s_source, t.o_task, t.y_format});
  return {{"format", "ALLOW/1"}, {"q_types", q_types}, {"sources", sources},
          {"tasks", tasks},      {"formats", formats}, {"allow", allow}};
}

InstructionAllowList InstructionAllowList::from_json(const nlohmann::json& j) {
  InstructionAllowList a;
  try {
    a.q_types = j.at("q_types").get<std::vector<std::string>>();
    a.sources = j.at("sources").get<std::vector<std::string>>();
    a.tasks = j.at("tasks").get<std::vector<std::string>>();
    a.formats = j.at("formats").get<std::vector<std::string>>();
    for (const auto& t : j.at("allow")) {
      auto v = t.get<std::vector<std::string>>();
      if (v.size() != 4) throw Error(ErrorCode::InvalidArgument, "allow-list entries have 4 fields");
      a.allowed.push_back({v[0], v[1], v[2], v[3]});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("allow-list: ") + e.what());
  }
  auto known = [](const std::vector<std::string>& dim, const std::string& v) {
    return std::find(dim.begin(), dim.end(), v) != dim.end();
  };
  for (const auto& t : a.allowed)
    if (!known(a.q_types, t.q_type) || !known(a.sources, t.s_source) || !known(a.tasks, t.o_task) ||
        !known(a.formats, t.y_format))
      throw Error(ErrorCode::InvalidArgument, "allow-list tuple uses an undeclared value: " + t.to_json().dump());
  return a;
}

InstructionAllowList InstructionAllowList::load(const std::filesystem::path& file) {
  auto j = nlohmann::json::parse(read_file(file), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, "allow-list " + file.string() + " is not JSON");
  return from_json(j);
}

const InstructionAllowList& InstructionAllowList::builtin() {
  static const InstructionAllowList a = [] {
    InstructionAllowList l;
    l.q_types = {"Verification", "Application"};
    l.sources = {"Raw", "Hypothetical"};
    l.tasks = {"Retrieval",          "Operations",  "CorrelationAnalysis",   "HypothesisTesting",
               "FactChecking",       "ConditionalCalculation", "PivotTransformation"};
    l.formats = {"SingleValue", "ListFields", "YesNo"};
    for (const char* src : {"Raw", "Hypothetical"}) {
      l.allowed.push_back({"Verification", src, "FactChecking", "YesNo"});
      l.allowed.push_back({"Verification", src, "HypothesisTesting", "YesNo"});
    }
    for (const char* src : {"Raw", "Hypothetical"}) {
      if (std::string(src) == "Raw") {
        l.allowed.push_back({"Application", src, "Retrieval", "SingleValue"});
        l.allowed.push_back({"Application", src, "Retrieval", "ListFields"});
      }
      l.allowed.push_back({"Application", src, "Operations", "SingleValue"});
      l.allowed.push_back({"Application", src, "Operations", "ListFields"});
      l.allowed.push_back({"Application", src, "CorrelationAnalysis", "SingleValue"});
      l.allowed.push_back({"Application", src, "ConditionalCalculation", "SingleValue"});
      l.allowed.push_back({"Application", src, "PivotTransformation", "ListFields"});
    }
    return l;
  }();
  return a;
}

std::vector<InstructionTuple> enumerate_instructions(const TableContext& ctx,
                                                     const InstructionAllowList& allow) {
  std::vector<InstructionTuple> out;
  if (ctx.empty()) return out;
  for (const auto& q : allow.q_types)
    for (const auto& s : allow.sources)
      for (const auto& o : allow.tasks)
        for (const auto& y : allow.formats) {
          InstructionTuple t{q, s, o, y};
          if (allow.allows(t)) out.push_back(std::move(t));
        }
  return out;
}

std::string_view to_string(VerifyStatus s) {
  switch (s) {
  case VerifyStatus::Pending: return "pending";
  case VerifyStatus::SemanticOk: return "semantic_ok";
  case VerifyStatus::ExecOk: return "exec_ok";
  case VerifyStatus::Admitted: return "admitted";
  }
  return "pending";
}

nlohmann::json SynthQuestion::to_json() const {
  return {{"format", "SYNTH/1"},        {"question", question},
          {"chain", chain},             {"program", program},
          {"answer", answer},           {"verify_status", to_string(verify_status)},
          {"instruction", instruction.to_json()}, {"revisions", revisions}};
}

SynthQuestion SynthQuestion::from_json(const nlohmann::json& j) {
  SynthQuestion q;
  try {
    q.question = j.at("question").get<std::string>();
    q.chain = j.at("chain").get<std::vector<std::string>>();
    q.program = j.value("program", "");
    q.answer = j.value("answer", "");
    const auto status = j.value("verify_status", "pending");
    for (auto s : {VerifyStatus::Pending, VerifyStatus::SemanticOk, VerifyStatus::ExecOk, VerifyStatus::Admitted})
      if (to_string(s) == status) q.verify_status = s;
    if (j.contains("instruction")) {
      const auto& i = j.at("instruction");
      q.instruction = {i.at("q_type").get<std::string>(), i.at("s_source").get<std::string>(),
                       i.at("o_task").get<std::string>(), i.at("y_format").get<std::string>()};
    }
    q.revisions = j.value("revisions", 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("SYNTH/1 record: ") + e.what());
  }
  return q;
}

std::string question_prompt(const TableContext& ctx, const InstructionTuple& i, std::size_t s_min) {
  std::string grounding = i.s_source == "Hypothetical"
                              ? "Hypothetical (state an assumed change to the table, then ask about it)"
                              : "Raw (use the table exactly as given)";
  return fmt::format(
      "You write analytical questions about a table.\n\n{}\n"
      "Instruction:\n- question type: {}\n- grounding: {}\n- analytical objective: {}\n"
      "- answer format: {}\n\n"
      "First propose a short question. Then develop its reasoning chain as concrete operations "
      "on the table (filtering, grouping, aggregation and so on), with at least {} steps.\n"
      "Reply as JSON: {{\"question\": \"...\", \"steps\": [\"...\", \"...\"]}}",
      ctx.render(), i.q_type, grounding, i.o_task, i.y_format, s_min);
}

namespace {

struct Proposal {
  std::string question;
  std::vector<std::string> steps;
};

Proposal parse_proposal(std::string_view reply) {
  Proposal p;
  if (auto j = extract_json_object(reply)) {
    if (j->contains("question") && j->at("question").is_string()) p.question = j->at("question").get<std::string>();
    if (j->contains("steps") && j->at("steps").is_array())
      for (const auto& s : j->at("steps"))
        if (s.is_string() && !text::trim(s.get<std::string>()).empty()) p.steps.push_back(s.get<std::string>());
    return p;
  }
  // Plain-text fallback: "Question: ..." then numbered steps.
  static const std::regex numbered(R"(^\s*[0-9]+[.)]\s+(.+)$)");
  for (const auto& line : text::split(reply, '\n')) {
    auto l = text::trim(line);
    if (text::starts_with_icase(l, "question:")) {
      p.question = std::string(text::trim(l.substr(9)));
      continue;
    }
    std::smatch m;
    std::string s(l);
    if (std::regex_match(s, m, numbered)) p.steps.push_back(m[1].str());
  }
  return p;
}

} // namespace

SynthQuestion synthesize_question(ModelBackend& backend, const TableContext& ctx,
                                  const InstructionTuple& i, const SynthesisConfig& cfg) {
  ChatRequest req;
  req.messages = {{"user", question_prompt(ctx, i, cfg.s_min)}};
  for (int round = 0; round <= cfg.max_revisions; ++round) {
    auto reply = backend.complete(req);
    auto p = parse_proposal(reply);
    if (!text::trim(p.question).empty() && p.steps.size() >= cfg.s_min) {
      SynthQuestion q;
      q.question = p.question;
      q.chain = std::move(p.steps);
      q.instruction = i;
      q.revisions = round;
      return q;
    }
    req.messages.push_back({"assistant", reply});
    req.messages.push_back(
        {"user", fmt::format("The reasoning chain has {} steps but at least {} are required. Revise "
                             "and elaborate the question and its reasoning logic so that answering it "
                             "takes at least {} concrete operations. Reply in the same JSON format.",
                             p.steps.size(), cfg.s_min, cfg.s_min)});
  }
  throw Error(ErrorCode::TooShallow,
              fmt::format("reasoning chain below {} steps after {} revisions", cfg.s_min, cfg.max_revisions));
}

SynthQuestion verify_question(SynthQuestion q, const TableContext& ctx, const TableFiles& tables,
                              ModelBackend& critic, ModelBackend& coder, Sandbox& sandbox,
                              const SynthesisConfig& cfg) {
  if (q.chain.size() < cfg.s_min)
    throw VerificationFailed("semantic", fmt::format("chain has {} steps, fewer than {}", q.chain.size(), cfg.s_min));
  std::string chain;
  for (std::size_t k = 0; k < q.chain.size(); ++k) chain += fmt::format("{}. {}\n", k + 1, q.chain[k]);

  auto review = ask(critic,
                    "Review the question and its reasoning chain for clarity, logical consistency, "
                    "and contextual alignment with the table. Reply 'Verdict: pass' or 'Verdict: "
                    "fail', then 'Reason: ...'.\n\n" +
                        ctx.render() + "\nQuestion: " + q.question + "\nReasoning chain:\n" + chain);
  static const std::regex verdict(R"(verdict\s*:\s*\**\s*(pass|fail|accept|reject))", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(review, m, verdict))
    throw VerificationFailed("semantic", "critic reply has no verdict");
  const auto v = text::to_lower(m[1].str());
  if (v == "fail" || v == "reject") throw VerificationFailed("semantic", std::string(text::trim(review)));
  q.verify_status = VerifyStatus::SemanticOk;

  auto code_reply = ask(coder,
                        "Compile the reasoning steps into one Python program. Read table i from the "
                        "CSV file whose path is in the environment variable TABLE_PATH_i (the first "
                        "table is TABLE_PATH_0). Print only the final answer.\n\nQuestion: " +
                            q.question + "\nReasoning steps:\n" + chain);
  auto parsed = parse_model_output(code_reply, Mode::PoT);
  const auto* code = std::get_if<CodeBlock>(&parsed.action);
  if (!code) throw VerificationFailed("exec", "coder reply has no code block");
  ExecRequest req;
  req.code = code->code;
  req.tables = tables;
  auto result = sandbox.execute(req);
  if (result.status != ExecStatus::Ok)
    throw VerificationFailed("exec", std::string(to_string(result.status)) + ": " + tail(result.stderr_text, 500));
  auto answer = text::trim(result.stdout_text);
  if (answer.empty()) throw VerificationFailed("exec", "program printed nothing");
  q.program = code->code;
  q.answer = std::string(answer);
  q.verify_status = VerifyStatus::ExecOk;
  q.verify_status = VerifyStatus::Admitted;
  return q;
}

// ---------------------------------------------------------------- rule-based QA

RuleTemplateLibrary RuleTemplateLibrary::load(const std::filesystem::path& dir) {
  RuleTemplateLibrary lib;
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorCode::IoError, "template directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto j = nlohmann::json::parse(read_file(f), nullptr, false);
    try {
      if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, "not JSON");
      RuleTemplate t;
      t.id = f.stem().string();
      t.subtask = j.at("subtask").get<std::string>();
      t.templates = j.at("templates").get<std::vector<std::string>>();
      if (t.templates.empty()) throw Error(ErrorCode::InvalidArgument, "no templates");
      lib.templates_.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "template " + f.string() + ": " + e.what());
    }
  }
  return lib;
}

const RuleTemplateLibrary& RuleTemplateLibrary::bundled() {
  static const RuleTemplateLibrary lib = load(std::filesystem::path(TABFLOW_DATA_DIR) / "templates" / "rule");
  return lib;
}

const RuleTemplate& RuleTemplateLibrary::get(const std::string& subtask) const {
  for (const auto& t : templates_)
    if (t.subtask == subtask) return t;
  throw Error(ErrorCode::NotFound, "no rule template for " + subtask);
}

const std::vector<std::string>& rule_subtasks() {
  static const std::vector<std::string> s{
      "Table Retrieval",       "Table Query",           "Table Selection",
      "Table Ranking",         "Table Imputation",      "Table Deletion",
      "Table Null Imputation", "Table Correlation Analysis", "Table Hypothesis Testing",
      "Table Distribution Testing"};
  return s;
}

nlohmann::json RuleQa::to_json() const {
  return {{"subtask", subtask}, {"question", question}, {"answer", answer}, {"program", program},
          {"params", params}};
}

namespace {

constexpr std::string_view kPrelude = R"(import csv
import math
import os
import re

with open(os.environ["TABLE_PATH_0"], newline="", encoding="utf-8") as f:
    data = list(csv.reader(f))
header, rows = data[0], data[1:]
NUMBER = re.compile(r"[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?")


def num(cell):
    cell = cell.strip()
    return float(cell) if NUMBER.fullmatch(cell) else None


def missing(cell):
    return cell.strip() == ""


def fmt(v):
    s = "%.4f" % v
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def col(name):
    return header.index(name)

)";

// Column roles derived once per table.
struct Roles {
  std::vector<std::size_t> numeric;      // Numerical columns with >= 2 numeric values
  std::vector<std::size_t> categorical;  // text columns with a repeated value
  std::optional<std::size_t> key;        // unique, complete text column
};

Roles assign_roles(const ProcessedTable& t) {
  Roles r;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    auto values = column_values(t, c);
    auto type = infer_column_type(values);
    std::size_t nums = 0, present = 0;
    std::set<std::string> distinct;
    bool clean = true;
    for (const auto& v : values) {
      if (is_missing(v)) continue;
      ++present;
      if (numeric_value(v)) ++nums;
      auto s = v.to_text();
      if (s != text::trim(s) || s.find('\n') != std::string::npos || s.find('\r') != std::string::npos)
        clean = false;
      distinct.insert(std::move(s));
    }
    if (type == ColumnType::Numerical && nums >= 2) r.numeric.push_back(c);
    if ((type == ColumnType::Categorical || type == ColumnType::Textual) && clean && present > 0) {
      if (distinct.size() < present && distinct.size() >= 2) r.categorical.push_back(c);
      if (!r.key && present == t.body.size() && distinct.size() == present) r.key = c;
    }
  }
  return r;
}

std::string fill(std::string tmpl, const std::map<std::string, std::string>& vars) {
  for (const auto& [k, v] : vars) {
    const std::string token = "{" + k + "}";
    for (std::size_t pos = tmpl.find(token); pos != std::string::npos; pos = tmpl.find(token, pos + v.size()))
      tmpl.replace(pos, token.size(), v);
  }
  return tmpl;
}

class RuleBuilder {
public:
  RuleBuilder(const ProcessedTable& t, std::uint64_t seed) : t_(t), roles_(assign_roles(t)), rng_(seed) {}

  std::optional<RuleQa> make(const std::string& subtask, const std::string& tmpl) {
    if (subtask == "Table Retrieval") return retrieval(tmpl);
    if (subtask == "Table Query") return query(tmpl);
    if (subtask == "Table Selection") return selection(tmpl);
    if (subtask == "Table Ranking") return ranking(tmpl);
    if (subtask == "Table Imputation") return imputation(tmpl);
    if (subtask == "Table Deletion") return deletion(tmpl);
    if (subtask == "Table Null Imputation") return null_imputation(tmpl);
    if (subtask == "Table Correlation Analysis") return correlation(tmpl);
    if (subtask == "Table Hypothesis Testing") return hypothesis(tmpl);
    if (subtask == "Table Distribution Testing") return distribution(tmpl);
    throw Error(ErrorCode::InvalidArgument, "not a rule sub-task: " + subtask);
  }

  void require(const std::string& subtask) const {
    auto need = [&](bool ok, const char* what) {
      if (!ok) throw Error(ErrorCode::Ineligible, subtask + " needs " + what);
    };
    if (t_.body.empty()) throw Error(ErrorCode::Ineligible, subtask + " needs body rows");
    if (subtask == "Table Retrieval") need(!t_.header.empty(), "a column");
    if (subtask == "Table Query" || subtask == "Table Selection")
      need(!roles_.categorical.empty() && !roles_.numeric.empty(), "a categorical and a numeric column");
    if (subtask == "Table Deletion") need(!roles_.categorical.empty(), "a categorical column");
    if (subtask == "Table Ranking" || subtask == "Table Imputation" || subtask == "Table Hypothesis Testing" ||
        subtask == "Table Distribution Testing")
      need(!roles_.numeric.empty(), "a numeric column");
    if (subtask == "Table Correlation Analysis") need(roles_.numeric.size() >= 2, "two numeric columns");
    if (subtask == "Table Null Imputation") {
      bool any = false;
      for (auto c : roles_.numeric)
        for (const auto& row : t_.body) any = any || is_missing(row[c]);
      need(any, "a numeric column with missing values");
    }
  }

private:
  const ProcessedTable& t_;
  Roles roles_;
  std::mt19937_64 rng_;

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  template <class T>
  const T& pick_from(const std::vector<T>& v) { return v[pick(v.size())]; }

  const std::string& name(std::size_t c) const { return t_.header[c]; }
  std::string cell(std::size_t r, std::size_t c) const { return t_.body[r][c].to_text(); }
  std::optional<double> number(std::size_t r, std::size_t c) const {
    return is_missing(t_.body[r][c]) ? std::nullopt : numeric_value(t_.body[r][c]);
  }

  std::string key_of(std::size_t r) const { return roles_.key ? cell(r, *roles_.key) : std::to_string(r + 1); }
  std::string key_name() const { return roles_.key ? name(*roles_.key) : "row number"; }
  std::string row_ref(std::size_t r) const {
    return roles_.key ? fmt::format("the row whose {} is \"{}\"", name(*roles_.key), cell(r, *roles_.key))
                      : fmt::format("row {}", r + 1);
  }
  // Python helpers selecting the row and naming rows.
  std::string key_code(std::size_t r) const {
    if (roles_.key)
      return fmt::format("KEY = col({})\n\n\ndef match(i, r):\n    return r[KEY] == {}\n\n\n"
                         "def key_of(i, r):\n    return r[KEY]\n\n\n",
                         py_str(name(*roles_.key)), py_str(cell(r, *roles_.key)));
    return fmt::format("def match(i, r):\n    return i + 1 == {}\n\n\ndef key_of(i, r):\n    return str(i + 1)\n\n\n",
                       r + 1);
  }
  std::string key_names_code() const {
    if (roles_.key)
      return fmt::format("KEY = col({})\n\n\ndef key_of(i, r):\n    return r[KEY]\n\n\n", py_str(name(*roles_.key)));
    return "def key_of(i, r):\n    return str(i + 1)\n\n\n";
  }

  nlohmann::json base_params() const {
    nlohmann::json p;
    p["key"] = roles_.key ? nlohmann::json(name(*roles_.key)) : nlohmann::json(nullptr);
    return p;
  }

  std::vector<std::size_t> present_rows(std::size_t c) const {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < t_.body.size(); ++r)
      if (!is_missing(t_.body[r][c])) rows.push_back(r);
    return rows;
  }
  std::vector<std::size_t> numeric_rows(std::size_t c) const {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < t_.body.size(); ++r)
      if (number(r, c)) rows.push_back(r);
    return rows;
  }

  RuleQa finish(const char* subtask, std::string question, std::string answer, std::string body,
                nlohmann::json params) const {
    return {subtask, std::move(question), std::move(answer), std::string(kPrelude) + body, std::move(params)};
  }

  std::optional<RuleQa> retrieval(const std::string& tmpl) {
    std::vector<std::size_t> candidates;
    for (std::size_t c = 0; c < t_.header.size(); ++c)
      if (!roles_.key || c != *roles_.key) candidates.push_back(c);
    if (candidates.empty()) return std::nullopt;
    const auto c = pick_from(candidates);
    auto rows = present_rows(c);
    if (rows.empty()) return std::nullopt;
    const auto r = pick_from(rows);
    auto value = cell(r, c);
    if (value != text::trim(value) || value.find('\n') != std::string::npos) return std::nullopt;
    auto params = base_params();
    params.update({{"column", name(c)}, {"row", r}});
    return finish("Table Retrieval", fill(tmpl, {{"col", name(c)}, {"row_ref", row_ref(r)}}), value,
                  key_code(r) + fmt::format("c = col({})\nfor i, r in enumerate(rows):\n    if match(i, r):\n"
                                            "        print(r[c])\n        break\n",
                                            py_str(name(c))),
                  params);
  }

  std::optional<RuleQa> query(const std::string& tmpl) {
    const auto cat = pick_from(roles_.categorical);
    const auto num = pick_from(roles_.numeric);
    if (cat == num) return std::nullopt;
    const auto value = cell(pick_from(present_rows(cat)), cat);
    double total = 0.0;
    for (std::size_t r = 0; r < t_.body.size(); ++r)
      if (cell(r, cat) == value)
        if (auto v = number(r, num)) total += *v;
    auto params = base_params();
    params.update({{"filter_column", name(cat)}, {"value", value}, {"column", name(num)}});
    return finish("Table Query", fill(tmpl, {{"num", name(num)}, {"cat", name(cat)}, {"value", value}}),
                  text::format_answer_number(total),
                  fmt::format("c, n = col({}), col({})\ntotal = 0.0\nfor r in rows:\n    if r[c] == {}:\n"
                              "        v = num(r[n])\n        if v is not None:\n            total += v\n"
                              "print(fmt(total))\n",
                              py_str(name(cat)), py_str(name(num)), py_str(value)),
                  params);
  }

  std::optional<RuleQa> selection(const std::string& tmpl) {
    const auto cat = pick_from(roles_.categorical);
    const auto num = pick_from(roles_.numeric);
    if (cat == num) return std::nullopt;
    const auto value = cell(pick_from(present_rows(cat)), cat);
    auto nrows = numeric_rows(num);
    const std::string threshold(text::trim(cell(pick_from(nrows), num)));
    const double thr = *text::parse_number(threshold);
    std::vector<std::string> keys;
    for (std::size_t r = 0; r < t_.body.size(); ++r) {
      auto v = number(r, num);
      if (cell(r, cat) == value && v && *v > thr) keys.push_back(key_of(r));
    }
    auto params = base_params();
    params.update({{"filter_column", name(cat)}, {"value", value}, {"column", name(num)},
                   {"threshold", std::string(threshold)}});
    return finish("Table Selection",
                  fill(tmpl, {{"key", key_name()}, {"cat", name(cat)}, {"value", value}, {"num", name(num)},
                              {"threshold", std::string(threshold)}}),
                  keys.empty() ? "none" : text::join(keys, ", "),
                  key_names_code() +
                      fmt::format("c, n = col({}), col({})\nTHRESH = float({})\nout = []\n"
                                  "for i, r in enumerate(rows):\n    v = num(r[n])\n"
                                  "    if r[c] == {} and v is not None and v > THRESH:\n"
                                  "        out.append(key_of(i, r))\n"
                                  "print(\", \".join(out) if out else \"none\")\n",
                                  py_str(name(cat)), py_str(name(num)), py_str(std::string(threshold)),
                                  py_str(value)),
                  params);
  }

  std::optional<RuleQa> ranking(const std::string& tmpl) {
    const auto num = pick_from(roles_.numeric);
    const bool largest = pick(2) == 0;
    std::optional<double> best;
    std::string best_key;
    for (std::size_t r = 0; r < t_.body.size(); ++r) {
      auto v = number(r, num);
      if (v && (!best || (largest ? *v > *best : *v < *best))) {
        best = v;
        best_key = key_of(r);
      }
    }
    if (!best) return std::nullopt;
    auto params = base_params();
    params.update({{"column", name(num)}, {"direction", largest ? "largest" : "smallest"}});
    return finish("Table Ranking",
                  fill(tmpl, {{"key", key_name()}, {"num", name(num)}, {"extreme", largest ? "largest" : "smallest"}}),
                  best_key,
                  key_names_code() +
                      fmt::format("n = col({})\nbest = None\nbest_key = None\nfor i, r in enumerate(rows):\n"
                                  "    v = num(r[n])\n    if v is not None and (best is None or v {} best):\n"
                                  "        best, best_key = v, key_of(i, r)\nprint(best_key)\n",
                                  py_str(name(num)), largest ? ">" : "<"),
                  params);
  }

  std::optional<RuleQa> imputation(const std::string& tmpl) {
    const auto num = pick_from(roles_.numeric);
    auto rows = numeric_rows(num);
    if (rows.size() < 3) return std::nullopt;
    const auto target = pick_from(rows);
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < t_.body.size(); ++r) {
      if (r == target || (roles_.key && cell(r, *roles_.key) == cell(target, *roles_.key))) continue;
      if (auto v = number(r, num)) total += *v, ++n;
    }
    if (n == 0) return std::nullopt;
    auto params = base_params();
    params.update({{"column", name(num)}, {"row", target}});
    return finish("Table Imputation", fill(tmpl, {{"num", name(num)}, {"row_ref", row_ref(target)}}),
                  text::format_answer_number(total / static_cast<double>(n)),
                  key_code(target) +
                      fmt::format("n = col({})\ntotal = 0.0\ncount = 0\nfor i, r in enumerate(rows):\n"
                                  "    if match(i, r):\n        continue\n    v = num(r[n])\n"
                                  "    if v is not None:\n        total += v\n        count += 1\n"
                                  "print(fmt(total / count))\n",
                                  py_str(name(num))),
                  params);
  }

  std::optional<RuleQa> deletion(const std::string& tmpl) {
    const auto cat = pick_from(roles_.categorical);
    const auto value = cell(pick_from(present_rows(cat)), cat);
    std::size_t remain = 0;
    for (std::size_t r = 0; r < t_.body.size(); ++r)
      if (cell(r, cat) != value) ++remain;
    auto params = base_params();
    params.update({{"filter_column", name(cat)}, {"value", value}});
    return finish("Table Deletion", fill(tmpl, {{"cat", name(cat)}, {"value", value}}), std::to_string(remain),
                  fmt::format("c = col({})\nremain = 0\nfor r in rows:\n    if r[c] != {}:\n        remain += 1\n"
                              "print(remain)\n",
                              py_str(name(cat)), py_str(value)),
                  params);
  }

  std::optional<RuleQa> null_imputation(const std::string& tmpl) {
    std::vector<std::size_t> cols;
    for (auto c : roles_.numeric)
      for (const auto& row : t_.body)
        if (is_missing(row[c])) {
          cols.push_back(c);
          break;
        }
    if (cols.empty()) return std::nullopt;
    const auto num = pick_from(cols);
    std::vector<double> present;
    for (std::size_t r = 0; r < t_.body.size(); ++r)
      if (auto v = number(r, num)) present.push_back(*v);
    if (present.empty()) return std::nullopt;
    std::sort(present.begin(), present.end());
    const std::size_t m = present.size();
    const double median = m % 2 ? present[m / 2] : (present[m / 2 - 1] + present[m / 2]) / 2;
    double total = 0.0;
    for (std::size_t r = 0; r < t_.body.size(); ++r) {
      if (is_missing(t_.body[r][num])) total += median;
      else if (auto v = number(r, num)) total += *v;
    }
    auto params = base_params();
    params.update({{"column", name(num)}});
    return finish("Table Null Imputation", fill(tmpl, {{"num", name(num)}}), text::format_answer_number(total),
                  fmt::format("n = col({})\npresent = []\nfor r in rows:\n    v = num(r[n])\n"
                              "    if not missing(r[n]) and v is not None:\n        present.append(v)\n"
                              "present.sort()\nm = len(present)\n"
                              "median = present[m // 2] if m % 2 else (present[m // 2 - 1] + present[m // 2]) / 2\n"
                              "total = 0.0\nfor r in rows:\n    if missing(r[n]):\n        total += median\n"
                              "    else:\n        v = num(r[n])\n        if v is not None:\n            total += v\n"
                              "print(fmt(total))\n",
                              py_str(name(num))),
                  params);
  }

  std::optional<RuleQa> correlation(const std::string& tmpl) {
    const auto a = pick_from(roles_.numeric);
    const auto b = pick_from(roles_.numeric);
    if (a == b) return std::nullopt;
    std::vector<double> xs, ys;
    for (std::size_t r = 0; r < t_.body.size(); ++r) {
      auto x = number(r, a), y = number(r, b);
      if (x && y) xs.push_back(*x), ys.push_back(*y);
    }
    const std::size_t n = xs.size();
    if (n < 3) return std::nullopt;
    double mx = 0.0, my = 0.0;
    for (double x : xs) mx += x;
    for (double y : ys) my += y;
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = xs[i] - mx, dy = ys[i] - my;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
    if (!(sxx > 0) || !(syy > 0)) return std::nullopt;
    auto params = base_params();
    params.update({{"column_a", name(a)}, {"column_b", name(b)}});
    return finish("Table Correlation Analysis", fill(tmpl, {{"a", name(a)}, {"b", name(b)}}),
                  text::format_answer_number(sxy / std::sqrt(sxx * syy)),
                  fmt::format("a, b = col({}), col({})\nxs, ys = [], []\nfor r in rows:\n"
                              "    x, y = num(r[a]), num(r[b])\n    if x is not None and y is not None:\n"
                              "        xs.append(x)\n        ys.append(y)\nn = len(xs)\nmx = 0.0\nmy = 0.0\n"
                              "for x in xs:\n    mx += x\nfor y in ys:\n    my += y\nmx /= n\nmy /= n\n"
                              "sxx = syy = sxy = 0.0\nfor x, y in zip(xs, ys):\n    dx, dy = x - mx, y - my\n"
                              "    sxx += dx * dx\n    syy += dy * dy\n    sxy += dx * dy\n"
                              "print(fmt(sxy / math.sqrt(sxx * syy)))\n",
                              py_str(name(a)), py_str(name(b))),
                  params);
  }

  std::optional<RuleQa> hypothesis(const std::string& tmpl) {
    const auto num = pick_from(roles_.numeric);
    auto rows = numeric_rows(num);
    if (rows.size() < 3) return std::nullopt;
    const auto mu_text = std::string(text::trim(cell(pick_from(rows), num)));
    const double mu = *text::parse_number(mu_text);
    std::vector<double> xs;
    for (auto r : rows) xs.push_back(*number(r, num));
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    if (!(ss > 0)) return std::nullopt;
    const double s = std::sqrt(ss / (n - 1));
    const double t = (mean - mu) / (s / std::sqrt(n));
    auto params = base_params();
    params.update({{"column", name(num)}, {"mu", mu_text}});
    return finish("Table Hypothesis Testing", fill(tmpl, {{"num", name(num)}, {"mu", mu_text}}),
                  std::abs(t) > 2 ? "Yes" : "No",
                  fmt::format("n = col({})\nMU = float({})\nxs = []\nfor r in rows:\n    v = num(r[n])\n"
                              "    if v is not None:\n        xs.append(v)\nmean = 0.0\nfor x in xs:\n    mean += x\n"
                              "mean /= len(xs)\nss = 0.0\nfor x in xs:\n    ss += (x - mean) * (x - mean)\n"
                              "s = math.sqrt(ss / (len(xs) - 1))\nt = (mean - MU) / (s / math.sqrt(len(xs)))\n"
                              "print(\"Yes\" if abs(t) > 2 else \"No\")\n",
                              py_str(name(num)), py_str(mu_text)),
                  params);
  }

  std::optional<RuleQa> distribution(const std::string& tmpl) {
    const auto num = pick_from(roles_.numeric);
    std::vector<double> xs;
    for (auto r : numeric_rows(num)) xs.push_back(*number(r, num));
    if (xs.size() < 3) return std::nullopt;
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double m2 = 0.0, m3 = 0.0;
    for (double x : xs) {
      const double d = x - mean;
      m2 += d * d;
      m3 += d * d * d;
    }
    if (!(m2 > 0)) return std::nullopt;
    auto params = base_params();
    params.update({{"column", name(num)}});
    return finish("Table Distribution Testing", fill(tmpl, {{"num", name(num)}}), m3 > 0 ? "Yes" : "No",
                  fmt::format("n = col({})\nxs = []\nfor r in rows:\n    v = num(r[n])\n    if v is not None:\n"
                              "        xs.append(v)\nmean = 0.0\nfor x in xs:\n    mean += x\nmean /= len(xs)\n"
                              "m3 = 0.0\nfor x in xs:\n    d = x - mean\n    m3 += d * d * d\n"
                              "print(\"Yes\" if m3 > 0 else \"No\")\n",
                              py_str(name(num))),
                  params);
  }
};

} // namespace

std::vector<RuleQa> rule_generate_qa(const ProcessedTable& t, const std::string& subtask, std::uint64_t seed,
                                     std::size_t count, const RuleTemplateLibrary& lib) {
  if (std::find(rule_subtasks().begin(), rule_subtasks().end(), subtask) == rule_subtasks().end())
    throw Error(ErrorCode::InvalidArgument, "not a rule sub-task: " + subtask);
  const auto& tmpl = lib.get(subtask);
  RuleBuilder builder(t, seed);
  builder.require(subtask);
  std::mt19937_64 pick(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<RuleQa> out;
  std::set<std::string> seen;
  for (std::size_t attempt = 0; out.size() < count && attempt < count * 8; ++attempt) {
    const auto& phrasing =
        tmpl.templates[std::uniform_int_distribution<std::size_t>(0, tmpl.templates.size() - 1)(pick)];
    auto qa = builder.make(subtask, phrasing);
    if (qa && seen.insert(qa->question).second) out.push_back(std::move(*qa));
  }
  if (out.empty()) throw Error(ErrorCode::Ineligible, subtask + ": no instance could be generated");
  return out;
}

bool verify_rule_qa(const RuleQa& qa, const std::string& csv_path, Sandbox& sandbox) {
  ExecRequest req;
  req.code = qa.program;
  req.tables = {{"table", csv_path}};
  auto result = sandbox.execute(req);
  return result.status == ExecStatus::Ok && text::trim(result.stdout_text) == qa.answer;
}

// ---------------------------------------------------------------- LLM-based QA

const std::vector<std::string>& llm_subtasks() {
  static const std::vector<std::string> s{"Table General Operations", "Table Domain-specific Operations",
                                          "Table Plausibility Verification", "Table Summary"};
  return s;
}

bool is_perfect_rating(std::string_view reply) {
  static const std::regex verdict(R"(verdict\s*:\s*\**\s*(perfect|imperfect|not perfect))", std::regex::icase);
  static const std::regex score(R"(([0-9]+(?:\.[0-9]+)?)\s*/\s*10\b)");
  const std::string s(reply);
  std::smatch m;
  if (std::regex_search(s, m, verdict)) return text::to_lower(m[1].str()) == "perfect";
  if (std::regex_search(s, m, score)) return std::stod(m[1].str()) == 10.0;
  return false;
}

LlmGenResult llm_generate_qa(ModelBackend& generator, const std::array<ModelBackend*, 2>& discriminators,
                             const ProcessedTable* table, const std::string& subtask) {
  if (std::find(llm_subtasks().begin(), llm_subtasks().end(), subtask) == llm_subtasks().end())
    throw Error(ErrorCode::InvalidArgument, "not an LLM-generated sub-task: " + subtask);
  for (auto* d : discriminators)
    if (!d) throw Error(ErrorCode::InvalidArgument, "two discriminators are required");

  LlmGenResult result;
  std::string table_csv;
  std::string prompt;
  if (table) {
    table_csv = serialize_csv(*table);
    prompt = "Sub-task: " + subtask +
             ". Write question-answer pairs grounded in the table below. Reply as JSON: "
             "{\"qa\": [{\"question\": \"...\", \"answer\": \"...\"}]}\n\nTable (CSV):\n" +
             table_csv;
  } else {
    prompt = "Sub-task: " + subtask +
             ". No table is given: create a small realistic table and question-answer pairs about "
             "it. Reply as JSON: {\"table\": \"<CSV text>\", \"qa\": [{\"question\": \"...\", "
             "\"answer\": \"...\"}]}";
  }
  auto reply = extract_json_object(ask(generator, prompt));
  if (!reply || !reply->contains("qa") || !reply->at("qa").is_array()) {
    result.dropped.push_back("generator reply unparseable");
    return result;
  }

  std::vector<LlmQa> candidates;
  for (const auto& item : reply->at("qa")) {
    if (!item.is_object() || !item.contains("question") || !item.contains("answer") ||
        !item.at("question").is_string() || !item.at("answer").is_string()) {
      result.dropped.push_back("malformed QA item");
      continue;
    }
    candidates.push_back({subtask, item.at("question").get<std::string>(), item.at("answer").get<std::string>(), {}});
  }

  if (!table) {
    if (!reply->contains("table") || !reply->at("table").is_string()) {
      for (std::size_t i = 0; i < candidates.size(); ++i) result.dropped.push_back("no generated table");
      return result;
    }
    table_csv = reply->at("table").get<std::string>();
    std::string failure;
    try {
      auto raw = parse_table(table_csv, TableFormat::CSV);
      auto q = check_collection_standards(raw, table_csv.size());
      if (!q.passed) {
        std::vector<std::string> ids;
        for (const auto& v : q.violations) ids.push_back(v.rule_id);
        failure = "generated table fails collection standards: " + text::join(ids, ", ");
      }
    } catch (const Error& e) {
      failure = std::string("generated table unreadable: ") + e.what();
    }
    if (!failure.empty()) {
      for (std::size_t i = 0; i < candidates.size(); ++i) result.dropped.push_back(failure);
      return result;
    }
    for (auto& c : candidates) c.table_csv = table_csv;
  }

  for (auto& c : candidates) {
    const std::string review =
        "Rate this question-answer pair on accuracy, relevance and coverage with respect to the "
        "table. Reply 'Verdict: perfect' only if it is flawless, otherwise 'Verdict: imperfect' "
        "and a reason.\n\nTable (CSV):\n" +
        table_csv + "\nQuestion: " + c.question + "\nAnswer: " + c.answer + "\n";
    bool perfect = true;
    for (auto* d : discriminators) perfect = is_perfect_rating(ask(*d, review)) && perfect;
    if (perfect) result.kept.push_back(std::move(c));
    else result.dropped.push_back("not rated perfect by both discriminators: " + c.question);
  }
  return result;
}

// ---------------------------------------------------------------- answer synthesis

nlohmann::json ICoTRecord::to_json() const {
  nlohmann::json steps_json = nlohmann::json::array();
  for (const auto& p : steps) steps_json.push_back({{"thought", p.thought}, {"result", p.result}});
  nlohmann::json j = {{"format", "ICOT/1"},
                      {"interaction_mode", to_string(interaction_mode)},
                      {"question", question},
                      {"answer", answer},
                      {"steps", steps_json},
                      {"final", final_output}};
  if (interaction_mode == InteractionMode::Dialogue) {
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back({{"role", "user"}, {"content", question}});
    for (const auto& p : steps) {
      messages.push_back({{"role", "assistant"}, {"content", p.thought}});
      messages.push_back({{"role", "tool"}, {"content", p.result}});
    }
    messages.push_back({{"role", "assistant"}, {"content", final_output}});
    j["messages"] = std::move(messages);
  } else {
    std::string chain;
    for (const auto& p : steps) chain += p.thought + "\nObservation:\n" + p.result + "\n";
    chain += final_output;
    j["text"] = std::move(chain);
  }
  return j;
}

ICoTRecord record_from_trace(const ReasoningTrace& trace, InteractionMode mode) {
  ICoTRecord rec;
  rec.question = trace.input.query;
  rec.interaction_mode = mode;
  std::string pending;
  for (const auto& s : trace.steps) {
    std::string thought = pending.empty() ? s.model_output : pending + "\n\n" + s.model_output;
    if (s.tool_result) {
      rec.steps.push_back({std::move(thought), s.tool_result->text});
      pending.clear();
    } else {
      pending = std::move(thought);
    }
  }
  rec.final_output = pending;
  if (trace.final) rec.answer = trace.final->text;
  return rec;
}

IterativeResult iterative_answer(ModelBackend& backend, const ToolRegistry& tools, const std::string& question,
                                 const std::vector<TableHandle>& tables, const IterativeOptions& opts) {
  SessionInput in;
  in.query = question;
  in.tables = tables;
  in.mode = Mode::ICoT;
  in.max_steps = opts.max_steps;
  in.prompt_profile = "assistant";
  SessionOptions so;
  so.interaction = opts.interaction;
  so.max_consecutive_failures = opts.max_consecutive_failures;
  so.profile = assistant_profile();
  auto trace = run_session(in, backend, tools, so);
  if (trace.status != TraceStatus::Completed)
    throw Error(ErrorCode::Unresolved, "no answer: session ended with " + std::string(to_string(trace.status)) +
                                           (trace.error.empty() ? "" : " (" + trace.error + ")"));
  IterativeResult r{*trace.final, record_from_trace(trace, opts.interaction), std::move(trace)};
  return r;
}

namespace {

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : text::trim(s)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  while (!out.empty() && out.back() == '.') out.pop_back();
  return out;
}

std::string candidate_answer(const std::string& reply) {
  auto parsed = parse_model_output(reply, Mode::TCoT);
  if (const auto* f = std::get_if<FinalAnswer>(&parsed.action)) return f->text;
  auto lines = text::split(std::string(text::trim(reply)), '\n');
  return lines.empty() ? std::string() : std::string(text::trim(lines.back()));
}

} // namespace

bool same_answer(std::string_view a, std::string_view b) {
  auto na = normalize_answer(a), nb = normalize_answer(b);
  if (na == nb) return true;
  auto x = chart::coerce_number(na), y = chart::coerce_number(nb);
  if (x && y) {
    const double scale = std::max(std::abs(*x), std::abs(*y));
    return std::abs(*x - *y) <= 1e-6 * scale;
  }
  return false;
}

VoteResult vote_reference(const std::vector<std::string>& candidates, ModelBackend& judge,
                          const std::string& question) {
  if (candidates.empty()) throw Error(ErrorCode::NoMajority, "no candidate answers");
  std::vector<std::string> reps;
  VoteResult v;
  for (const auto& c : candidates) {
    auto it = std::find_if(reps.begin(), reps.end(), [&](const std::string& r) { return same_answer(r, c); });
    if (it == reps.end()) {
      reps.push_back(c);
      v.counts.push_back(1);
    } else {
      ++v.counts[static_cast<std::size_t>(it - reps.begin())];
    }
  }
  const auto top = *std::max_element(v.counts.begin(), v.counts.end());
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < reps.size(); ++i)
    if (v.counts[i] == top) tied.push_back(i);
  if (tied.size() == 1) {
    v.reference = reps[tied.front()];
    return v;
  }
  std::string prompt = "The candidate answers to the question below are tied in a vote. Choose the most "
                       "reliable one and reply 'Choice: <number>'.\n\nQuestion: " +
                       question + "\n";
  for (std::size_t k = 0; k < tied.size(); ++k) prompt += fmt::format("{}. {}\n", k + 1, reps[tied[k]]);
  auto reply = ask(judge, prompt);
  static const std::regex choice(R"(choice\s*:\s*\**\s*([0-9]+))", std::regex::icase);
  std::smatch m;
  if (std::regex_search(reply, m, choice)) {
    auto k = std::stoul(m[1].str());
    if (k >= 1 && k <= tied.size()) {
      v.reference = reps[tied[k - 1]];
      v.arbitrated = true;
      return v;
    }
  }
  throw Error(ErrorCode::NoMajority, "tie between " + std::to_string(tied.size()) +
                                         " answers not settled by the judge; flagged for human review");
}

nlohmann::json DistillRecord::to_json() const {
  return {{"format", "DISTILL/1"},
          {"question", question},
          {"reference_answer", reference_answer},
          {"teacher_candidates", teacher_candidates},
          {"student_scores", student_scores},
          {"best_index", best_index},
          {"arbitrated", arbitrated},
          {"icot", best.to_json()}};
}

DistillRecord distill_select(ModelBackend& teacher, ModelBackend& student, ModelBackend& judge,
                             const ToolRegistry& tools, const std::string& question,
                             const std::vector<TableHandle>& tables, const DistillOptions& opts) {
  DistillRecord rec;
  rec.question = question;
  std::string context;
  for (const auto& t : tables) context += render_metadata(t.metadata) + "\n";
  const std::string teacher_prompt = context + "Question: " + question +
                                     "\n\nReason step by step and end with 'Final Answer: <answer>'.";
  std::vector<std::string> replies;
  for (std::size_t i = 0; i < opts.teacher_samples; ++i) {
    replies.push_back(ask(teacher, teacher_prompt));
    rec.teacher_candidates.push_back(candidate_answer(replies.back()));
  }
  auto vote = vote_reference(rec.teacher_candidates, judge, question);
  rec.reference_answer = vote.reference;
  rec.arbitrated = vote.arbitrated;
  std::string guidance;
  for (std::size_t i = 0; i < replies.size(); ++i)
    if (same_answer(rec.teacher_candidates[i], vote.reference)) {
      guidance = replies[i];
      break;
    }

  const std::string guided = question + "\n\nReference reasoning (for guidance):\n" + guidance +
                             "\nReference answer: " + rec.reference_answer;
  std::vector<std::optional<ICoTRecord>> records;
  for (std::size_t i = 0; i < opts.student_samples; ++i) {
    try {
      auto r = iterative_answer(student, tools, guided, tables, opts.student);
      r.record.question = question;
      const std::string review = "Rate how consistent the student's answer and reasoning are with the "
                                 "reference answer. Reply 'Score: <number between 0 and 1>'.\n\nReference "
                                 "answer: " +
                                 rec.reference_answer + "\nStudent answer: " + r.answer.text +
                                 "\nStudent reasoning:\n" + r.record.to_json().value("text", r.record.final_output);
      static const std::regex score(R"(score\s*:\s*\**\s*([0-9]+(?:\.[0-9]+)?))", std::regex::icase);
      const auto reply = ask(judge, review);
      std::smatch m;
      double s = 0;
      if (std::regex_search(reply, m, score)) s = std::clamp(std::stod(m[1].str()), 0.0, 1.0);
      rec.student_scores.push_back(s);
      records.emplace_back(std::move(r.record));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Unresolved) throw;
      rec.student_scores.push_back(0);
      records.emplace_back(std::nullopt);
    }
  }
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i] && (!best || rec.student_scores[i] > rec.student_scores[*best])) best = i;
  if (!best) throw Error(ErrorCode::Unresolved, "no student trace reached an answer");
  rec.best_index = *best;
  rec.best = std::move(*records[*best]);
  return rec;
}

} // namespace tabflow::synth
