// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Exit codes: 0 success, 2 validation error,
// 3 model backend error, 4 tool error (sandbox failures, sessions that end
// without an answer, synthesis that does not verify).
#include "tabflow/backend.hpp"
#include "tabflow/charttool.hpp"
#include "tabflow/corpus_filter.hpp"
#include "tabflow/error.hpp"
#include "tabflow/grpo.hpp"
#include "tabflow/orchestrator.hpp"
#include "tabflow/preprocess.hpp"
#include "tabflow/sandbox.hpp"
#include "tabflow/sensing.hpp"
#include "tabflow/service.hpp"
#include "tabflow/store.hpp"
#include "tabflow/synthesis.hpp"
#include "tabflow/table.hpp"
#include "tabflow/text_util.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace tabflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitBackend = 3;
constexpr int kExitTool = 4;

int exit_code_for(ErrorCode c) {
  switch (c) {
  case ErrorCode::BackendFailure:
  case ErrorCode::JudgeUnparseable: return kExitBackend;
  case ErrorCode::SetupError:
  case ErrorCode::SandboxBusy:
  case ErrorCode::RenderError:
  case ErrorCode::NoFinalAnswer:
  case ErrorCode::Unresolved:
  case ErrorCode::NoMajority:
  case ErrorCode::TooShallow:
  case ErrorCode::VerificationFailed: return kExitTool;
  default: return kExitInput;
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-") {
    std::cout << data;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << data;
}

TableFormat format_of(const fs::path& p, bool tsv) {
  return tsv || p.extension() == ".tsv" ? TableFormat::TSV : TableFormat::CSV;
}

struct TableOptions {
  bool tsv = false;
  std::string merges;
};

RawTable load_raw(const fs::path& p, const TableOptions& o) {
  auto bytes = read_file(p);
  auto raw = parse_table(bytes, format_of(p, o.tsv));
  raw.set_source_name(p.stem().string());
  if (!o.merges.empty()) raw.set_merges(parse_merge_sidecar(read_file(o.merges)));
  return raw;
}

ProcessedTable load_processed(const fs::path& p, const TableOptions& o, const PreprocessConfig& cfg) {
  auto t = preprocess(load_raw(p, o), cfg);
  t.source_name = p.stem().string();
  return t;
}

/// Processed CSVs for the sandbox live in a private temporary directory.
struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / fmt::format("tabflow-cli-{}", ::getpid());
    fs::create_directories(dir);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  TableHandle stage(const ProcessedTable& t, const SensePolicy& sp, std::size_t index) {
    auto path = dir / fmt::format("table_{}.csv", index);
    std::ofstream(path, std::ios::binary) << serialize_csv(t);
    auto meta = sense(t, sp);
    meta.name = t.source_name;
    return {meta, path.string()};
  }
};

struct Common {
  std::string config;
  std::string mock;
  EngineConfig load() const {
    auto c = EngineConfig::load(config.empty() ? std::nullopt : std::optional<fs::path>(config));
    if (!mock.empty()) c.mock_script = mock;
    return c;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "engine configuration (JSON)");
  cmd->add_option("--mock", c.mock, "replay script for a mock model backend");
}

InteractionMode parse_interaction(const std::string& s) {
  if (s == "react") return InteractionMode::ReAct;
  if (s == "dialogue") return InteractionMode::Dialogue;
  throw Error(ErrorCode::InvalidArgument, "interaction must be react or dialogue");
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Table understanding and analysis engine"};
  app.require_subcommand(1);
  std::function<int()> action;

  // preprocess
  TableOptions pre_opts;
  std::string pre_in, pre_out, pre_cfg;
  bool pre_json = false;
  auto* pre = app.add_subcommand("preprocess", "normalize a raw table and print it as CSV");
  pre->add_option("input", pre_in, "CSV or TSV file")->required();
  pre->add_flag("--tsv", pre_opts.tsv, "treat input as TSV");
  pre->add_option("--merges", pre_opts.merges, "JSON list of merged regions [r0,c0,r1,c1]");
  pre->add_option("--preprocess-config", pre_cfg, "preprocessing settings (JSON)");
  pre->add_option("-o,--output", pre_out, "output file (default stdout)");
  pre->add_flag("--json", pre_json, "print header, units and provenance as JSON");
  pre->callback([&] {
    action = [&] {
      auto cfg = pre_cfg.empty() ? PreprocessConfig{} : PreprocessConfig::from_json(read_file(pre_cfg));
      auto t = load_processed(pre_in, pre_opts, cfg);
      if (pre_json) {
        nlohmann::json units = nlohmann::json::array();
        for (const auto& u : t.units) units.push_back(u ? nlohmann::json(*u) : nlohmann::json(nullptr));
        write_output(pre_out, nlohmann::json{{"header", t.header},
                                             {"rows", t.rows()},
                                             {"units", units},
                                             {"provenance", t.provenance},
                                             {"csv", serialize_csv(t)}}
                                  .dump(2) +
                                  "\n");
      } else {
        write_output(pre_out, serialize_csv(t));
      }
      return kExitOk;
    };
  });

  // sense
  TableOptions sense_opts;
  std::string sense_in, sense_strategy = "head_tail_random";
  SensePolicy policy;
  bool sense_json = false;
  auto* sen = app.add_subcommand("sense", "print table metadata (SENSE/1)");
  sen->add_option("input", sense_in)->required();
  sen->add_flag("--tsv", sense_opts.tsv);
  sen->add_option("--merges", sense_opts.merges);
  sen->add_option("--sample-cap", policy.sample_cap, "rows in the sample");
  sen->add_option("--strategy", sense_strategy, "head or head_tail_random");
  sen->add_option("--seed", policy.seed);
  sen->add_flag("--stats", policy.include_stats, "include min/max/mean");
  sen->add_flag("--json", sense_json);
  sen->callback([&] {
    action = [&] {
      if (sense_strategy == "head") policy.sample_strategy = SampleStrategy::Head;
      else if (sense_strategy != "head_tail_random")
        throw Error(ErrorCode::InvalidArgument, "strategy must be head or head_tail_random");
      auto t = load_processed(sense_in, sense_opts, {});
      auto meta = sense(t, policy);
      meta.name = fs::path(sense_in).stem().string();
      std::cout << (sense_json ? metadata_to_json(meta).dump(2) + "\n" : render_metadata(meta));
      return kExitOk;
    };
  });

  // ask
  Common ask_common;
  std::vector<std::string> ask_tables;
  std::string ask_query, ask_mode = "icot", ask_trace, ask_profile = "default", ask_interaction, ask_artifacts;
  int ask_steps = 0;
  auto* ask = app.add_subcommand("ask", "answer a question about one or more tables");
  add_common(ask, ask_common);
  ask->add_option("tables", ask_tables, "table files (CSV or TSV)");
  ask->add_option("-t,--table", ask_tables, "table file (repeatable)");
  ask->add_option("-q,--query", ask_query)->required();
  ask->add_option("--mode", ask_mode, "tcot, pot or icot");
  ask->add_option("--max-steps", ask_steps, "step budget K");
  ask->add_option("--profile", ask_profile, "prompt profile name");
  ask->add_option("--interaction", ask_interaction, "react or dialogue");
  ask->add_option("--trace", ask_trace, "write the TRACE/1 document here");
  ask->add_option("--artifacts", ask_artifacts, "directory for rendered charts");
  ask->callback([&] {
    action = [&] {
      if (ask_tables.empty()) throw Error(ErrorCode::InvalidArgument, "at least one table is required");
      auto cfg = ask_common.load();
      auto backend = cfg.make_backend();
      auto sandbox = std::make_shared<Sandbox>(cfg.sandbox_config());
      ToolRegistry tools(sandbox, cfg.limits);
      Workspace ws;
      SessionInput in;
      in.query = ask_query;
      in.mode = parse_mode(ask_mode);
      in.max_steps = ask_steps > 0 ? ask_steps : cfg.max_steps;
      in.prompt_profile = ask_profile;
      for (std::size_t i = 0; i < ask_tables.size(); ++i)
        in.tables.push_back(ws.stage(load_processed(ask_tables[i], {}, cfg.preprocess_config()), cfg.sense, i));
      SessionOptions so;
      so.interaction = ask_interaction.empty() ? cfg.interaction : parse_interaction(ask_interaction);
      so.max_consecutive_failures = cfg.max_consecutive_failures;
      so.profile = cfg.profile(ask_profile);
      so.model = cfg.model;
      if (!ask_artifacts.empty()) {
        fs::create_directories(ask_artifacts);
        so.artifact_dir = ask_artifacts;
      }
      auto trace = run_session(in, *backend, tools, so);
      if (!ask_trace.empty()) write_output(ask_trace, trace.to_json().dump(2) + "\n");
      switch (trace.status) {
      case TraceStatus::Completed:
        std::cout << kFinalAnswerMarker << " " << trace.final->text << "\n";
        if (trace.final->asset) std::cout << "Asset: " << *trace.final->asset << "\n";
        return kExitOk;
      case TraceStatus::BackendFailure:
        std::cerr << "error: backend failure: " << trace.error << "\n";
        return kExitBackend;
      default:
        std::cerr << "error: no answer (" << to_string(trace.status) << ")"
                  << (trace.error.empty() ? "" : ": " + trace.error) << "\n";
        return kExitTool;
      }
    };
  });

  // chart
  std::string chart_in, chart_out;
  auto* chart_cmd = app.add_subcommand("chart", "render a CHART/1 call to SVG");
  chart_cmd->add_option("input", chart_in, "JSON call")->required();
  chart_cmd->add_option("-o,--output", chart_out);
  chart_cmd->callback([&] {
    action = [&] {
      auto j = nlohmann::json::parse(read_file(chart_in), nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, chart_in + " is not valid JSON");
      write_output(chart_out, chart::render(chart::validate_call(j)).svg);
      return kExitOk;
    };
  });

  // filter
  Common filter_common;
  std::string filter_in, filter_out, filter_report, filter_cfg, filter_balance;
  std::size_t filter_resample = 0;
  std::uint64_t filter_seed = 0;
  auto* filt = app.add_subcommand("filter", "filter a CORPUS/1 JSONL dataset");
  add_common(filt, filter_common);
  filt->add_option("input", filter_in)->required();
  filt->add_option("-o,--output", filter_out, "retained samples (JSONL)");
  filt->add_option("--report", filter_report, "per-sample report (JSON)");
  filt->add_option("--filter-config", filter_cfg, "filter thresholds (JSON)");
  filt->add_option("--balance", filter_balance, "'uniform' or a JSON file of target proportions");
  filt->add_option("--resample", filter_resample, "draw this many samples with the balancing weights");
  filt->add_option("--seed", filter_seed);
  filt->callback([&] {
    action = [&] {
      auto samples = corpus::read_jsonl(read_file(filter_in));
      corpus::FilterConfig fc;
      if (!filter_cfg.empty()) {
        auto j = nlohmann::json::parse(read_file(filter_cfg), nullptr, false);
        if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, filter_cfg + " is not valid JSON");
        fc = corpus::FilterConfig::from_json(j);
      }
      auto judge = filter_common.load().make_backend();
      auto result = corpus::filter_dataset(samples, fc, *judge);
      auto out = result.retained;
      if (!filter_balance.empty()) {
        std::vector<std::string> cats;
        for (const auto& s : result.retained) cats.push_back(s.category);
        std::map<std::string, double> target;
        if (filter_balance == "uniform") {
          target = corpus::uniform_target(corpus::capabilities());
        } else {
          auto j = nlohmann::json::parse(read_file(filter_balance), nullptr, false);
          if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, filter_balance + " is not valid JSON");
          target = j.get<std::map<std::string, double>>();
        }
        auto weights = corpus::balancing_weights(corpus::category_proportions(cats), target);
        std::cerr << "weights: " << nlohmann::json(weights).dump() << "\n";
        if (filter_resample > 0) {
          out.clear();
          for (auto i : corpus::weighted_resample(cats, weights, filter_resample, filter_seed))
            out.push_back(result.retained[i]);
        }
      }
      write_output(filter_out, corpus::write_jsonl(out));
      if (!filter_report.empty()) write_output(filter_report, result.report.to_json().dump(2) + "\n");
      auto& counts = result.report.counts;
      std::cerr << fmt::format("retained {} of {}, removed {} (f_short {}, f_repeat {}, f_density {}, f_score {})\n",
                               result.report.retained, samples.size(), samples.size() - result.report.retained,
                               counts["f_short"], counts["f_repeat"], counts["f_density"], counts["f_score"]);
      return kExitOk;
    };
  });

  // synth
  auto* synth = app.add_subcommand("synth", "data synthesis");
  synth->require_subcommand(1);

  std::string rule_in, rule_subtask;
  std::uint64_t rule_seed = 0;
  std::size_t rule_count = 3;
  bool rule_verify = false;
  auto* rule = synth->add_subcommand("rule", "rule-based QA for a table");
  rule->add_option("input", rule_in)->required();
  rule->add_option("--subtask", rule_subtask)->required();
  rule->add_option("--seed", rule_seed);
  rule->add_option("--count", rule_count);
  rule->add_flag("--verify", rule_verify, "run each program and compare with the answer");
  rule->callback([&] {
    action = [&] {
      auto t = load_processed(rule_in, {}, {});
      auto qas = synth::rule_generate_qa(t, rule_subtask, rule_seed, rule_count);
      Workspace ws;
      std::optional<TableHandle> staged;
      std::unique_ptr<Sandbox> sandbox;
      if (rule_verify) {
        staged = ws.stage(t, {}, 0);
        sandbox = std::make_unique<Sandbox>(EngineConfig::load(std::nullopt).sandbox_config());
      }
      int rc = kExitOk;
      for (const auto& qa : qas) {
        auto j = qa.to_json();
        if (rule_verify) {
          j["verified"] = synth::verify_rule_qa(qa, staged->path, *sandbox);
          if (!j["verified"].get<bool>()) rc = kExitTool;
        }
        std::cout << j.dump() << "\n";
      }
      return rc;
    };
  });

  Common llm_common;
  std::string llm_in, llm_subtask;
  auto* llm = synth->add_subcommand("llm", "model-generated QA, with or without a table");
  add_common(llm, llm_common);
  llm->add_option("--table", llm_in, "ground QA in this table (otherwise the table is generated)");
  llm->add_option("--subtask", llm_subtask)->required();
  llm->callback([&] {
    action = [&] {
      auto backend = llm_common.load().make_backend();
      std::optional<ProcessedTable> t;
      if (!llm_in.empty()) t = load_processed(llm_in, {}, {});
      auto r = synth::llm_generate_qa(*backend, {backend.get(), backend.get()}, t ? &*t : nullptr, llm_subtask);
      for (const auto& qa : r.kept)
        std::cout << nlohmann::json{{"subtask", qa.subtask}, {"question", qa.question}, {"answer", qa.answer},
                                    {"table_csv", qa.table_csv}}
                         .dump()
                  << "\n";
      for (const auto& d : r.dropped) std::cerr << "dropped: " << d << "\n";
      return kExitOk;
    };
  });

  std::string complex_in;
  auto* cplx = synth->add_subcommand("complex", "check the complex-table criteria");
  cplx->add_option("input", complex_in)->required();
  cplx->callback([&] {
    action = [&] {
      auto report = synth::is_complex_table(load_processed(complex_in, {}, {}));
      std::cout << report.to_json().dump(2) << "\n";
      return report.complex ? kExitOk : kExitTool;
    };
  });

  // grpo
  auto* grpo_cmd = app.add_subcommand("grpo", "policy optimization utilities");
  grpo_cmd->require_subcommand(1);
  std::string grpo_in;
  bool grpo_sample_std = false;
  auto* grpo_eval = grpo_cmd->add_subcommand("eval", "advantages and clipped objective for a rollout group");
  grpo_eval->add_option("input", grpo_in, "JSON {rewards, logp_new, logp_old}")->required();
  grpo_eval->add_flag("--sample-std", grpo_sample_std);
  grpo_eval->callback([&] {
    action = [&] {
      auto j = nlohmann::json::parse(read_file(grpo_in), nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, grpo_in + " is not valid JSON");
      auto rollout = grpo::GroupRollout::from_json(j);
      grpo::GrpoConfig gc;
      gc.sample_std = grpo_sample_std;
      auto adv = grpo::group_advantages(rollout.rewards, gc);
      std::cout << nlohmann::json{{"advantages", adv}, {"objective", grpo::grpo_objective(rollout, adv, gc)}}.dump(2)
                << "\n";
      return kExitOk;
    };
  });

  // serve
  Common serve_common;
  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  add_common(serve, serve_common);
  serve->add_option("--host", serve_host);
  serve->add_option("--port", serve_port);
  serve->callback([&] {
    action = [&] {
      auto cfg = serve_common.load();
      auto backend = cfg.make_backend();
      auto sandbox = std::make_shared<Sandbox>(cfg.sandbox_config());
      Service svc(cfg, backend, sandbox);
      int port = svc.bind(serve_host, serve_port);
      if (port < 0) throw Error(ErrorCode::IoError, fmt::format("cannot bind {}:{}", serve_host, serve_port));
      std::cerr << fmt::format("listening on http://{}:{}\n", serve_host, port);
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      svc.listen_after_bind();
      g_service = nullptr;
      return kExitOk;
    };
  });

  // replay
  std::string replay_in;
  std::vector<std::string> replay_tables;
  std::string replay_interaction = "react";
  auto* replay = app.add_subcommand("replay", "re-run a TRACE/1 document from its recorded model outputs");
  replay->add_option("trace", replay_in)->required();
  replay->add_option("-t,--table", replay_tables, "the tables the trace was recorded on")->required();
  replay->add_option("--interaction", replay_interaction);
  replay->callback([&] {
    action = [&] {
      auto recorded = nlohmann::json::parse(read_file(replay_in), nullptr, false);
      if (recorded.is_discarded() || recorded.value("format", "") != "TRACE/1")
        throw Error(ErrorCode::InvalidArgument, replay_in + " is not a TRACE/1 document");
      std::vector<std::string> outputs;
      for (const auto& s : recorded.at("steps")) outputs.push_back(s.at("model_output").get<std::string>());
      auto backend = std::make_shared<MockBackend>(outputs);
      auto cfg = EngineConfig::load(std::nullopt);
      auto sandbox = std::make_shared<Sandbox>(cfg.sandbox_config());
      ToolRegistry tools(sandbox, cfg.limits);
      Workspace ws;
      const auto& input = recorded.at("input");
      SessionInput in;
      in.query = input.at("query").get<std::string>();
      in.mode = parse_mode(input.at("mode").get<std::string>());
      in.max_steps = input.at("max_steps").get<int>();
      in.prompt_profile = input.value("prompt_profile", "default");
      for (std::size_t i = 0; i < replay_tables.size(); ++i) {
        auto t = load_processed(replay_tables[i], {}, cfg.preprocess_config());
        if (i < input.at("tables").size()) t.source_name = input.at("tables")[i].at("name").get<std::string>();
        in.tables.push_back(ws.stage(t, cfg.sense, i));
      }
      SessionOptions so;
      so.interaction = parse_interaction(replay_interaction);
      so.profile = cfg.profile(in.prompt_profile);
      auto replayed = run_session(in, *backend, tools, so).to_json();
      if (replayed == recorded) {
        std::cout << "identical\n";
        return kExitOk;
      }
      std::cout << nlohmann::json::diff(recorded, replayed).dump(2) << "\n";
      return kExitTool;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInput;
  }
  try {
    return action ? action() : kExitInput;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
