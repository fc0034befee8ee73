// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include "helpers.hpp"
#include "oracles.hpp"

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

#include <fmt/format.h>
#include <httplib.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <thread>

namespace fs = std::filesystem;
using namespace tabflow;
using namespace testing_support;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failed expectations; the first few are kept for the report.
struct Checker {
  Outcome out;
  std::size_t failures = 0;
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures;
    out.pass = false;
    if (failures <= 3) out.detail += (out.detail.empty() ? "" : "; ") + what;
  }
  Outcome done(const std::string& summary) {
    if (out.pass) out.detail = summary;
    else if (failures > 3) out.detail += fmt::format("; {} more", failures - 3);
    return out;
  }
};

/// "a|b|c" -> {"a", "b", "c"}
std::vector<std::string> text_split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == '|') out.push_back(cur), cur.clear();
    else cur.push_back(ch);
  }
  out.push_back(cur);
  return out;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// State shared by the criteria: a private directory for harness files and
/// the sandbox, which also receives every sandboxed run.
struct Env {
  fs::path root;
  std::shared_ptr<Sandbox> sandbox;
};

// ------------------------------------------------------------------ 1

Outcome filter_constants(Env& env) {
  Checker c;
  corpus::FilterConfig cfg;
  auto samples = corpus::read_jsonl(oracle::read_file(fixture("filter/violators.jsonl")));
  auto judge = MockBackend::from_file(fixture("filter/judge.json").string());
  auto res = corpus::filter_dataset(samples, cfg, *judge);
  c.expect(res.report.retained == 1 && samples.size() - res.report.retained == 4,
           fmt::format("violator fixture removed {}", samples.size() - res.report.retained));
  for (const char* rule : {"f_short", "f_repeat", "f_density", "f_score"})
    c.expect(res.report.counts[rule] == 1, std::string(rule) + " count != 1");

  // Boundary samples, each with its expected flag from the definitions.
  auto sample = [](std::string id, std::string answer, std::optional<std::string> reasoning) {
    corpus::CorpusSample s;
    s.id = id;
    s.question = "[" + id + "#] boundary question";
    s.answer = std::move(answer);
    s.reasoning = std::move(reasoning);
    s.category = "Data Analysis";
    s.subtask = "Table Correlation Analysis";
    return s;
  };
  const std::string phrase = "alpha beta gamma delta epsilon zeta eta theta iota kappa";
  auto repeat = [&](int n) {
    std::string r;
    for (int i = 0; i < n; ++i) r += (i ? " " : "") + phrase;
    return r;
  };
  const std::string long_answer = "The answer is clearly forty two units";
  struct Case {
    corpus::CorpusSample s;
    bool f_short, f_repeat, f_density, f_score;
  };
  std::vector<Case> cases{
      {sample("b1", "42", std::nullopt), true, false, false, false},
      {sample("b2", "42", "multiply six by seven"), false, false, false, false},
      {sample("b3", "one two three four fiver", std::nullopt), true, false, false, false},      // 5 tokens, 24 chars
      {sample("b4", "one two three four fivers", std::nullopt), false, false, false, false},    // 5 tokens, 25 chars
      {sample("b5", "alphabet beta gamma 1234567890123456", std::nullopt), true, false, false, false},  // 4 tokens, 36 chars
      {sample("b6", long_answer, repeat(20)), false, false, false, false},
      {sample("b7", long_answer, repeat(21)), false, true, false, false},
      {sample("b8", long_answer, "the of and to in revenue growth margin ratio total"), false, false, false, false},
      {sample("b9", long_answer, "the of and to in a revenue growth margin total"), false, false, true, false},
      {sample("b10", long_answer, "revenue growth"), false, false, false, true},   // judge 8.4
      {sample("b11", long_answer, "revenue growth"), false, false, false, false},  // judge 8.5
      {sample("b12", long_answer, "revenue growth"), false, false, false, false},  // judge 9/10
  };
  std::vector<MockBackend::Rule> rules{{"[b10#]", "Score: 8.4"}, {"[b11#]", "Score: 8.5"}, {"[b12#]", "Score: 9/10"}};
  MockBackend boundary_judge({"Score: 9"}, rules, true);
  std::vector<corpus::CorpusSample> bs;
  for (const auto& k : cases) bs.push_back(k.s);
  auto br = corpus::filter_dataset(bs, cfg, boundary_judge);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& v = br.report.samples[i];
    const auto& k = cases[i];
    // Independent recomputation of the inputs each rule sees.
    const auto answer_tokens = oracle::ascii_words(k.s.answer).size();
    const bool o_short = (answer_tokens < 5 || k.s.answer.size() < 25) && !k.s.reasoning;
    c.expect(o_short == k.f_short, k.s.id + " oracle disagrees with the expected f_short");
    if (k.s.reasoning) {
      const auto words = oracle::ascii_words(*k.s.reasoning);
      c.expect(oracle::max_ngram_frequency(words, 10) == v.dup, k.s.id + " duplicate count");
    }
    c.expect(v.f_short == k.f_short, k.s.id + " f_short");
    c.expect(v.f_repeat == k.f_repeat, k.s.id + " f_repeat");
    c.expect(v.f_density == k.f_density, k.s.id + " f_density");
    c.expect(v.f_score == k.f_score, k.s.id + " f_score");
  }
  c.expect(br.report.samples[5].dup == 20 && br.report.samples[6].dup == 21, "dup boundary values");
  c.expect(br.report.samples[7].density == 0.5, "density boundary value");
  c.expect(br.report.samples[10].score == 8.5, "score boundary value");

  // Runtime on 1k samples under a mock judge.
  std::vector<corpus::CorpusSample> big;
  std::mt19937_64 rng(7);
  std::vector<MockBackend::Rule> big_rules;
  for (int i = 0; i < 1000; ++i) {
    const auto kind = i % 5;
    auto s = sample("k" + std::to_string(i), long_answer + " item " + std::to_string(i),
                    "compute revenue growth for quarter " + std::to_string(rng() % 1000));
    if (kind == 1) s.answer = std::to_string(i), s.reasoning.reset();
    if (kind == 2) s.reasoning = repeat(25);
    if (kind == 3) s.reasoning = "the of and to in a an revenue growth total";
    if (kind == 4) big_rules.push_back({"[k" + std::to_string(i) + "#]", "Score: 7"});
    big.push_back(s);
  }
  MockBackend big_judge({"Score: 9.5"}, big_rules, true);
  const auto t0 = Clock::now();
  auto bigr = corpus::filter_dataset(big, cfg, big_judge);
  const double secs = seconds_since(t0);
  c.expect(secs < 1.0, fmt::format("1k filter took {:.3f}s", secs));
  c.expect(bigr.report.retained == 200, fmt::format("1k retained {}", bigr.report.retained));
  return c.done(fmt::format("4 of 5 violators removed, 12 boundary samples match, 1k samples in {:.3f}s", secs));
}

// ------------------------------------------------------------------ 2

Outcome ngram_equivalence(Env&) {
  Checker c;
  std::mt19937_64 rng(2024);
  std::size_t checked = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t len = rng() % 501;
    const std::size_t vocab = 1 + rng() % 6;
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < len; ++i) tokens.push_back("w" + std::to_string(rng() % vocab));
    const std::size_t n = k % 4 == 0 ? 10 : 1 + rng() % 12;
    const auto expected = oracle::max_ngram_frequency(tokens, n);
    c.expect(corpus::count_duplicate_ngrams(tokens, n) == expected, fmt::format("stream {} n={}", k, n));
    // A 4-bit hash forces collisions; verification must still count exactly.
    c.expect(corpus::count_duplicate_ngrams(tokens, n, 0xF) == expected, fmt::format("stream {} masked", k));
    ++checked;
  }
  return c.done(fmt::format("{} random streams match brute force, with and without forced hash collisions", checked));
}

// ------------------------------------------------------------------ 3

Outcome balancing(Env&) {
  Checker c;
  const auto& caps = corpus::capabilities();
  const std::vector<double> pct{23.65, 24.84, 31.16, 15.77, 3.99, 0.59};
  std::map<std::string, double> p;
  for (std::size_t i = 0; i < caps.size(); ++i) p[caps[i]] = pct[i] / 100.0;
  auto w = corpus::balancing_weights(p, corpus::uniform_target(caps));
  const double w_da = w.at("Data Analysis");
  c.expect(std::abs(w_da - 4.177) < 5e-4, fmt::format("w_DA = {:.6f}", w_da));
  c.expect(std::abs(w_da - (1.0 / 6.0) / 0.0399) < 1e-12, "w_DA differs from (1/6)/0.0399");

  // 10k-sample corpus with the same shares, resampled 60k times.
  std::vector<std::string> cats;
  const std::vector<int> counts{2365, 2484, 3116, 1577, 399, 59};
  for (std::size_t i = 0; i < caps.size(); ++i) cats.insert(cats.end(), counts[i], caps[i]);
  auto weights = corpus::balancing_weights(corpus::category_proportions(cats), corpus::uniform_target(caps));
  auto draw = corpus::weighted_resample(cats, weights, 60000, 42);
  std::map<std::string, double> got;
  for (auto i : draw) got[cats[i]] += 1.0 / 60000.0;
  double worst = 0;
  for (const auto& cap : caps) worst = std::max(worst, std::abs(got[cap] - 1.0 / 6.0));
  c.expect(worst <= 0.01, fmt::format("largest deviation from 1/6 is {:.4f}", worst));
  c.expect(draw == corpus::weighted_resample(cats, weights, 60000, 42), "same seed gave a different draw");
  return c.done(fmt::format("w_DA = {:.4f}; 60k resample within {:.4f} of 1/6", w_da, worst));
}

// ------------------------------------------------------------------ 4

Outcome grpo_checks(Env&) {
  Checker c;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0), rew(0.0, 1.0);
  double worst_obj = 0, worst_aff = 0, worst_grad = 0;
  for (int k = 0; k < 200; ++k) {
    grpo::GroupRollout g;
    const std::size_t G = 2 + rng() % 7;
    for (std::size_t i = 0; i < G; ++i) {
      g.rewards.push_back(k % 10 == 0 ? static_cast<double>(rng() % 2) : rew(rng));
      const std::size_t len = 1 + rng() % 20;
      std::vector<double> lo, ln;
      for (std::size_t t = 0; t < len; ++t) {
        const double old = -std::abs(u(rng)) * 3;
        lo.push_back(old);
        ln.push_back(old + 0.3 * u(rng));
      }
      g.logp_old.push_back(lo);
      g.logp_new.push_back(ln);
    }
    const auto adv = grpo::group_advantages(g.rewards);
    const auto oracle_adv = oracle::advantages(g.rewards);
    double mean = 0, var = 0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(G);
    for (double a : adv) var += (a - mean) * (a - mean);
    var /= static_cast<double>(G);
    bool distinct = false;
    for (double r : g.rewards) distinct |= r != g.rewards.front();
    c.expect(std::abs(mean) < 1e-12, fmt::format("rollout {} advantage mean {}", k, mean));
    if (distinct) c.expect(std::abs(std::sqrt(var) - 1) < 1e-12, fmt::format("rollout {} advantage std", k));
    for (std::size_t i = 0; i < G; ++i) c.expect(std::abs(adv[i] - oracle_adv[i]) < 1e-12, "advantage value");

    const double j = grpo::grpo_objective(g, adv);
    const double jo = oracle::clipped_objective(g.logp_new, g.logp_old, oracle_adv);
    worst_obj = std::max(worst_obj, std::abs(j - jo));

    // a * R + b with a > 0
    const double a = 0.1 + 10 * rew(rng), b = 5 * u(rng);
    auto g2 = g;
    for (auto& r : g2.rewards) r = a * r + b;
    if (distinct) worst_aff = std::max(worst_aff, std::abs(grpo::grpo_objective(g2, grpo::group_advantages(g2.rewards)) - j));

    // Central differences on tokens away from the clip kinks.
    const auto grad = grpo::grpo_objective_gradient(g, adv);
    for (std::size_t i = 0; i < G; ++i)
      for (std::size_t t = 0; t < g.logp_new[i].size(); ++t) {
        const double ratio = std::exp(g.logp_new[i][t] - g.logp_old[i][t]);
        if (std::abs(ratio - 0.8) < 1e-3 || std::abs(ratio - 1.2) < 1e-3) continue;
        const double h = 1e-6;
        auto plus = g, minus = g;
        plus.logp_new[i][t] += h;
        minus.logp_new[i][t] -= h;
        const double fd = (oracle::clipped_objective(plus.logp_new, plus.logp_old, oracle_adv) -
                           oracle::clipped_objective(minus.logp_new, minus.logp_old, oracle_adv)) /
                          (2 * h);
        worst_grad = std::max(worst_grad, std::abs(fd - grad[i][t]));
      }
  }
  c.expect(worst_obj <= 1e-12, fmt::format("objective off by {:.3e}", worst_obj));
  c.expect(worst_aff <= 1e-12, fmt::format("affine change moved J by {:.3e}", worst_aff));
  c.expect(worst_grad <= 1e-5, fmt::format("gradient off by {:.3e}", worst_grad));
  return c.done(fmt::format("200 rollouts: |dJ| {:.1e}, affine {:.1e}, gradient {:.1e}", worst_obj, worst_aff,
                            worst_grad));
}

// ------------------------------------------------------------------ 5

Outcome preprocess_golden(Env&) {
  Checker c;
  std::size_t fixtures = 0, idempotent = 0;
  for (const auto& entry : fs::directory_iterator(fixture("preprocess"))) {
    const auto path = entry.path();
    if (!entry.is_regular_file() || path.string().find(".merges.") != std::string::npos) continue;
    const auto stem = path.stem().string();
    const auto golden = nlohmann::json::parse(oracle::read_file(fixture("preprocess/golden/" + stem + ".json")));
    const auto format = path.extension() == ".tsv" ? TableFormat::TSV : TableFormat::CSV;
    auto raw = parse_table(oracle::read_file(path), format);
    const auto merges = fixture("preprocess/" + stem + ".merges.json");
    if (fs::exists(merges)) raw.set_merges(parse_merge_sidecar(oracle::read_file(merges)));
    ++fixtures;
    try {
      auto out = preprocess(raw);
      c.expect(!golden.contains("error"), stem + " should have been rejected");
      if (golden.contains("error")) continue;
      c.expect(out.header == golden.at("header").get<std::vector<std::string>>(), stem + " header");
      c.expect(serialize_csv(out) == golden.at("csv").get<std::string>(), stem + " csv");
      nlohmann::json units = nlohmann::json::array();
      for (const auto& u : out.units) units.push_back(u ? nlohmann::json(*u) : nlohmann::json(nullptr));
      c.expect(units == golden.at("units"), stem + " units");
      auto again = preprocess(parse_table(serialize_csv(out), TableFormat::CSV));
      const bool same = same_content(out, again);
      c.expect(same, stem + " not idempotent");
      idempotent += same;
    } catch (const Error& e) {
      c.expect(golden.contains("error") && golden.at("error") == std::string(to_string(e.code())),
               stem + " raised " + std::string(to_string(e.code())));
    }
  }
  c.expect(fixtures == 12, fmt::format("{} fixtures found", fixtures));

  // The sparsity bound itself: 7 of 10 missing passes, 8 of 10 does not.
  auto sparse = [](int missing) {
    Grid g{{CellValue::text("A"), CellValue::text("B")}};
    for (int r = 0; r < 5; ++r) {
      Row row;
      for (int col = 0; col < 2; ++col)
        row.push_back(r * 2 + col < missing ? CellValue::null() : CellValue::number(r * 2 + col));
      g.push_back(row);
    }
    return RawTable(g);
  };
  c.expect(preprocess(sparse(7)).rows() == 5, "70% missing was rejected");
  try {
    preprocess(sparse(8));
    c.expect(false, "80% missing was accepted");
  } catch (const Error& e) {
    c.expect(e.code() == ErrorCode::TooSparse, "80% missing raised the wrong code");
  }
  // Merged header cells join parent and child with an underscore.
  c.expect(standardize_header({{CellValue::text("Revenue"), CellValue::null()},
                               {CellValue::text("2016"), CellValue::text("2017")}},
                              {{0, 0, 0, 1}}) == std::vector<std::string>{"Revenue_2016", "Revenue_2017"},
           "underscore merge");
  return c.done(fmt::format("{} golden fixtures match, {} idempotent, 70% bound and underscore merge hold", fixtures,
                            idempotent));
}

// ------------------------------------------------------------------ 6

Outcome sensing_conservation(Env&) {
  Checker c;
  std::mt19937_64 rng(6);
  for (int k = 0; k < 500; ++k) {
    auto t = testing_support::random_table(rng);
    std::size_t nulls = 0;
    for (const auto& row : t.body)
      for (const auto& cell : row) nulls += cell.is_null();
    auto meta = sense(t);
    std::size_t reported = 0;
    for (auto m : meta.missing) reported += m;
    c.expect(reported == nulls, fmt::format("table {}: {} reported, {} nulls", k, reported, nulls));
    auto shuffled = t;
    std::shuffle(shuffled.body.begin(), shuffled.body.end(), rng);
    c.expect(sense(shuffled).types == meta.types, fmt::format("table {}: types changed under row shuffle", k));
  }
  return c.done("500 random tables: missing counts conserved, types invariant under row order");
}

// ------------------------------------------------------------------ 7

Outcome icot_case1(Env& env) {
  Checker c;
  auto table = load_processed(fixture("icot/case1.csv"));
  auto handle = stage(table, env.root / "case1" / "case1.csv", "case1.csv");
  SessionInput in;
  in.query = "What is the average annual revenue growth rate?";
  in.tables = {handle};
  in.mode = Mode::ICoT;
  in.max_steps = 4;
  ToolRegistry tools(env.sandbox);
  auto run = [&](ModelBackend& b) { return run_session(in, b, tools); };

  auto first_backend = MockBackend::from_file(fixture("icot/case1_script.json").string());
  auto trace = run(*first_backend);
  c.expect(trace.status == TraceStatus::Completed, "status " + std::string(to_string(trace.status)));
  c.expect(trace.steps.size() <= 4, fmt::format("{} steps", trace.steps.size()));
  std::string answer;
  try {
    answer = decode_answer(trace).text;
  } catch (const Error& e) {
    answer = e.what();
  }
  c.expect(answer == "-5.60%", "answer " + answer);
  std::size_t executed = 0;
  for (const auto& s : trace.steps)
    if (s.tool_result && s.tool_result->exec) {
      ++executed;
      c.expect(s.tool_result->exec->status == ExecStatus::Ok, fmt::format("step {} failed", s.index));
    }
  c.expect(executed == 3, fmt::format("{} programs executed", executed));
  if (trace.steps.size() >= 3 && trace.steps[2].tool_result && trace.steps[2].tool_result->exec)
    c.expect(oracle::strip(trace.steps[2].tool_result->exec->stdout_text) == "-5.60%", "program output");
  // Growth rates from the cleaned table, independently.
  const double g1 = 950.0 / 1000.0 - 1, g2 = 891.1 / 950.0 - 1;
  c.expect(fmt::format("{:.2f}%", (g1 + g2) / 2 * 100) == "-5.60%", "oracle average");

  // Replay from the script and from the recorded outputs.
  const auto doc = trace.to_json().dump();
  auto again = run(*MockBackend::from_file(fixture("icot/case1_script.json").string()));
  c.expect(again.to_json().dump() == doc, "script replay differs");
  std::vector<std::string> outputs;
  for (const auto& s : trace.steps) outputs.push_back(s.model_output);
  MockBackend recorded(outputs);
  c.expect(run(recorded).to_json().dump() == doc, "recorded replay differs");
  return c.done(fmt::format("answer {} in {} steps, {} sandbox runs, replay byte-identical", answer,
                            trace.steps.size(), executed));
}

// ------------------------------------------------------------------ 8

nlohmann::json random_json(std::mt19937_64& rng, int depth) {
  switch (rng() % (depth > 2 ? 6 : 8)) {
    case 0: return nullptr;
    case 1: return rng() % 2 == 0;
    case 2: return static_cast<double>(static_cast<std::int64_t>(rng())) / 1e3;
    case 3: {
      const double specials[] = {0.0, -0.0, 1e308, -1e308, std::nan(""), INFINITY, 4000.0, 100.0, 1e-300};
      return specials[rng() % 9];
    }
    case 4: return static_cast<std::int64_t>(rng() % 9000) - 100;
    case 5: {
      static const std::vector<std::string> words{"bar", "pie", "line", "scatter", "",  "12", "$1,200", "45%",
                                                  "#fff", "red", "x",  "-3.5 °C", "\xff\xfe", "nan", "1e999"};
      return words[rng() % words.size()];
    }
    case 6: {
      nlohmann::json a = nlohmann::json::array();
      const auto n = rng() % 5;
      for (std::size_t i = 0; i < n; ++i) a.push_back(random_json(rng, depth + 1));
      return a;
    }
    default: {
      static const std::vector<std::string> keys{"chart_type", "type", "series", "x", "y", "name", "options",
                                                 "width", "height", "legend", "colors", "title", "arguments"};
      nlohmann::json o = nlohmann::json::object();
      const auto n = rng() % 5;
      for (std::size_t i = 0; i < n; ++i) o[keys[rng() % keys.size()]] = random_json(rng, depth + 1);
      return o;
    }
  }
}

Outcome charttool_checks(Env&) {
  Checker c;
  const std::vector<std::string> months{"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                        "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  const std::vector<double> values{120.5, 98, 143.25, 160, 155.5, 171, 180.75, 176, 150, 132.5, 110, 145};
  nlohmann::json call = {{"chart_type", "bar"},
                         {"title", "Monthly sales"},
                         {"x_label", "Month"},
                         {"y_label", "Sales"},
                         {"series", {{{"name", "Sales"}, {"x", months}, {"y", values}}}}};
  auto asset = chart::render(chart::validate_call(call));
  std::string why;
  c.expect(oracle::xml_well_formed(asset.svg, &why), "SVG not well formed: " + why);
  auto recovered = oracle::invert_bar_heights(asset.svg);
  c.expect(recovered.size() == values.size(), fmt::format("{} bars found", recovered.size()));
  double worst = 0;
  for (std::size_t i = 0; i < std::min(recovered.size(), values.size()); ++i)
    worst = std::max(worst, std::abs(recovered[i] - values[i]) / std::abs(values[i]));
  c.expect(worst <= 0.005, fmt::format("bar height error {:.4f}", worst));
  c.expect(chart::render(chart::validate_call(call)).svg == asset.svg, "render is not deterministic");

  std::mt19937_64 rng(8);
  std::size_t accepted = 0, rejected = 0;
  for (int k = 0; k < 10000; ++k) {
    nlohmann::json input;
    if (k % 2 == 0) {
      input = call;
      const auto edits = 1 + rng() % 3;
      for (std::size_t e = 0; e < edits; ++e) {
        // An earlier edit may have changed a container's type; skip edits that no longer apply.
        try {
        switch (rng() % 5) {
          case 0: input[std::vector<std::string>{"chart_type", "title", "series", "options", "x_label"}[rng() % 5]] =
                      random_json(rng, 1);
            break;
          case 1: input["series"][0][std::vector<std::string>{"x", "y", "name"}[rng() % 3]] = random_json(rng, 1); break;
          case 2: input["series"][0]["y"][rng() % 12] = random_json(rng, 2); break;
          case 3: input["options"] = {{"width", random_json(rng, 2)}, {"colors", random_json(rng, 2)}}; break;
          default: input.erase(std::vector<std::string>{"chart_type", "series", "title"}[rng() % 3]); break;
        }
        } catch (const nlohmann::json::exception&) {
        }
      }
    } else {
      input = random_json(rng, 0);
    }
    try {
      chart::validate_call(input);
      ++accepted;
    } catch (const SchemaError&) {
      ++rejected;
    } catch (const std::exception& e) {
      c.expect(false, fmt::format("fuzz case {} raised {}", k, e.what()));
    }
  }
  return c.done(fmt::format("well-formed SVG, bars within {:.4f}%, deterministic; fuzz 10000 cases ({} ok, {} "
                            "SchemaError, 0 other)",
                            worst * 100, accepted, rejected));
}

// ------------------------------------------------------------------ 9

Outcome sandbox_checks(Env& env, const std::map<std::string, std::string>& before,
                       const std::function<std::map<std::string, std::string>()>& snapshot) {
  Checker c;
  ExecRequest spin;
  spin.code = "while True:\n    pass\n";
  spin.time_limit = 1.0;
  auto r = env.sandbox->execute(spin);
  const double grace = env.sandbox->config().grace;
  c.expect(r.status == ExecStatus::Timeout, "busy loop status " + std::string(to_string(r.status)));
  c.expect(r.duration <= spin.time_limit + grace, fmt::format("timeout took {:.3f}s", r.duration));

  // A program that ignores SIGTERM still stops at the grace deadline.
  ExecRequest stubborn;
  stubborn.code = "import signal\nsignal.signal(signal.SIGTERM, signal.SIG_IGN)\nwhile True:\n    pass\n";
  stubborn.time_limit = 1.0;
  auto r2 = env.sandbox->execute(stubborn);
  c.expect(r2.status == ExecStatus::Timeout, "SIGTERM-immune status");
  c.expect(r2.duration <= stubborn.time_limit + grace + 0.1, fmt::format("SIGKILL after {:.3f}s", r2.duration));

  // Table hand-off: the program counts the rows of TABLE_PATH_0.
  auto table = load_processed(fixture("tables/three_rows.csv"));
  const auto csv = env.root / "handoff" / "three_rows.csv";
  oracle::write_file(csv, serialize_csv(table));
  ExecRequest count;
  count.code = "import csv, os\nprint(len(list(csv.DictReader(open(os.environ['TABLE_PATH_0'])))))\n";
  count.tables = {{"three_rows", csv.string()}};
  auto rc = env.sandbox->execute(count);
  const auto expected_rows = oracle::read_csv(oracle::read_file(csv)).size() - 1;
  c.expect(rc.status == ExecStatus::Ok && oracle::strip(rc.stdout_text) == std::to_string(expected_rows),
           "row count program printed '" + oracle::strip(rc.stdout_text) + "'");

  // Writes aimed outside the working directory.
  const char* home = std::getenv("HOME");
  std::vector<std::string> targets{"/tmp/tabflow-escape-probe", "../tabflow-escape-probe",
                                   (fs::current_path() / "tabflow-escape-probe").string(),
                                   fixture("tabflow-escape-probe").string()};
  if (home) targets.push_back((fs::path(home) / "tabflow-escape-probe").string());
  for (const auto& t : targets) {
    ExecRequest w;
    w.code = "try:\n    open(" + nlohmann::json(t).dump() +
             ", 'w').write('x')\n    print('WROTE')\nexcept OSError as e:\n    print('BLOCKED', e.errno)\n";
    auto wr = env.sandbox->execute(w);
    c.expect(wr.stdout_text.rfind("BLOCKED", 0) == 0, "write to " + t + " was not blocked");
  }
  ExecRequest inside;
  inside.code = "open('result.txt', 'w').write('ok')\nprint(open('result.txt').read())\n";
  c.expect(oracle::strip(env.sandbox->execute(inside).stdout_text) == "ok", "write inside the workdir failed");

  const auto after = snapshot();
  std::size_t changed = 0;
  std::string first;
  for (const auto& [path, sig] : after) {
    auto it = before.find(path);
    if (it == before.end() || it->second != sig) {
      if (!changed++) first = path;
    }
  }
  for (const auto& [path, sig] : before)
    if (!after.count(path) && !changed++) first = path;
  c.expect(changed == 0, fmt::format("{} paths changed outside the workdir, e.g. {}", changed, first));
  return c.done(fmt::format("timeout after {:.2f}s (limit 1s + {:.1f}s grace), {} write probes blocked, "
                            "{} paths unchanged, row-count hand-off ok",
                            r.duration, grace, targets.size(), after.size()));
}

// ------------------------------------------------------------------ 10

ProcessedTable complex_table() {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0, 1);
  static const std::vector<std::string> cities{"Paris", "Lyon", "Nice", "Lille", "Metz"};
  static const std::vector<std::string> groups{"Tools", "Garden", "Kitchen", "Toys"};
  ProcessedTable t;
  t.header = {"Store", "City", "Category", "Sales", "Cost", "Profit", "Units", "Discount", "Rating", "Visits",
              "Returns", "Staff"};
  for (int r = 0; r < 120; ++r) {
    const double sales = std::round(u(rng) * 100000) / 100, cost = std::round(u(rng) * 50000) / 100;
    t.body.push_back({CellValue::text("Store " + std::to_string(1000 + r)), CellValue::text(cities[rng() % 5]),
                      CellValue::text(groups[rng() % 4]), CellValue::number(sales), CellValue::number(cost),
                      CellValue::number(std::round((sales - cost) * 100) / 100),
                      CellValue::number(static_cast<double>(rng() % 120)),
                      CellValue::number(static_cast<double>(rng() % 30) / 100),
                      CellValue::number(1 + static_cast<double>(rng() % 40) / 10),
                      CellValue::number(static_cast<double>(rng() % 5000)),
                      CellValue::number(static_cast<double>(rng() % 15)),
                      CellValue::number(static_cast<double>(2 + rng() % 20))});
  }
  t.units.assign(t.header.size(), std::nullopt);
  return t;
}

Outcome synthesis_checks(Env& env) {
  Checker c;
  std::mt19937_64 rng(1234);
  std::size_t qa_total = 0, qa_ok = 0, programs_ok = 0;
  for (int k = 0; k < 8; ++k) {
    auto t = testing_support::rule_table(rng, k % 4 != 3);
    const auto csv = env.root / "rules" / ("t" + std::to_string(k) + ".csv");
    oracle::write_file(csv, serialize_csv(t));
    const auto csv_text = oracle::read_file(csv);
    for (const auto& subtask : synth::rule_subtasks()) {
      std::vector<synth::RuleQa> qas;
      try {
        qas = synth::rule_generate_qa(t, subtask, 100 + static_cast<std::uint64_t>(k), 3);
      } catch (const Error& e) {
        c.expect(false, fmt::format("table {} {}: {}", k, subtask, e.what()));
        continue;
      }
      for (const auto& qa : qas) {
        ++qa_total;
        const auto expected = oracle::evaluate_rule(subtask, qa.params, csv_text);
        const bool match = expected == qa.answer;
        c.expect(match, fmt::format("{} on table {}: stored '{}', brute force '{}'", subtask, k, qa.answer, expected));
        qa_ok += match;
        const bool ran = synth::verify_rule_qa(qa, csv.string(), *env.sandbox);
        c.expect(ran, fmt::format("{} program on table {} disagrees", subtask, k));
        programs_ok += ran;
      }
    }
  }

  // Complex-table question synthesis with mock generator, critic and coder.
  auto table = complex_table();
  c.expect(synth::is_complex_table(table).complex, "generated table is not complex");
  const auto csv = env.root / "complex" / "stores.csv";
  auto handle = stage(table, csv, "stores");
  auto ctx = synth::build_table_context(table, handle.metadata);
  auto tuples = synth::enumerate_instructions(ctx);
  c.expect(tuples.size() >= 3, "fewer than 3 instruction tuples");
  const std::vector<std::pair<std::string, std::string>> proposals{
      {"What is the total sales of stores in Paris?", "filter rows with City Paris|select the Sales column|sum"},
      {"What is the average profit in the Tools category?", "filter Category Tools|select Profit|average"},
      {"How many stores sold more than 50 units with a rating above 3?",
       "filter Units above 50|filter Rating above 3|count rows"},
  };
  const std::string load = "import csv, os\nrows = list(csv.DictReader(open(os.environ['TABLE_PATH_0'])))\n";
  const std::vector<std::string> programs{
      load + "print(round(sum(float(r['Sales']) for r in rows if r['City'] == 'Paris'), 2))\n",
      load + "v = [float(r['Profit']) for r in rows if r['Category'] == 'Tools']\nprint(round(sum(v) / len(v), 2))\n",
      load + "print(sum(1 for r in rows if float(r['Units']) > 50 and float(r['Rating']) > 3))\n",
  };
  std::vector<std::string> gen_replies, coder_replies;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : text_split(proposals[i].second)) steps.push_back(s);
    gen_replies.push_back(nlohmann::json{{"question", proposals[i].first}, {"steps", steps}}.dump());
    coder_replies.push_back("```python\n" + programs[i] + "```");
  }
  MockBackend gen(gen_replies), critic({"Verdict: pass"}, {}, true), coder(coder_replies);
  const TableFiles files{{"stores", csv.string()}};
  std::size_t admitted = 0;
  for (std::size_t i = 0; i < proposals.size() && i < tuples.size(); ++i) {
    try {
      auto q = synth::synthesize_question(gen, ctx, tuples[i]);
      auto v = synth::verify_question(q, ctx, files, critic, coder, *env.sandbox);
      c.expect(v.verify_status == synth::VerifyStatus::Admitted, "question not admitted");
      c.expect(v.chain.size() >= 3, fmt::format("admitted chain of {}", v.chain.size()));
      ExecRequest rerun;
      rerun.code = v.program;
      rerun.tables = files;
      auto out = env.sandbox->execute(rerun);
      const bool same = out.status == ExecStatus::Ok && oracle::strip(out.stdout_text) == v.answer;
      c.expect(same, "re-execution gave '" + oracle::strip(out.stdout_text) + "', stored '" + v.answer + "'");
      admitted += same;
    } catch (const std::exception& e) {
      c.expect(false, std::string("complex question: ") + e.what());
    }
  }
  c.expect(admitted == 3, fmt::format("{} of 3 admitted programs reproduce", admitted));

  // Chains shorter than three steps never reach admission.
  MockBackend shallow({R"({"question": "What is the total sales?", "steps": ["select Sales", "sum"]})"}, {}, true);
  try {
    synth::synthesize_question(shallow, ctx, tuples.front());
    c.expect(false, "two-step chain was accepted");
  } catch (const Error& e) {
    c.expect(e.code() == ErrorCode::TooShallow, "shallow chain raised the wrong code");
  }
  synth::SynthQuestion two;
  two.question = "What is the total sales?";
  two.chain = {"select Sales", "sum"};
  two.instruction = tuples.front();
  MockBackend coder2({"```python\nprint(1)\n```"}, {}, true);
  try {
    synth::verify_question(two, ctx, files, critic, coder2, *env.sandbox);
    c.expect(false, "verification admitted a two-step chain");
  } catch (const synth::VerificationFailed& e) {
    c.expect(e.path() == "semantic", "two-step chain failed on the wrong path");
  }
  return c.done(fmt::format("{}/{} rule QA pairs match brute force, {}/{} programs reproduce; {} complex questions "
                            "re-execute to their answers; chains below 3 steps rejected",
                            qa_ok, qa_total, programs_ok, qa_total, admitted));
}

// ------------------------------------------------------------------ 11

std::vector<std::pair<std::string, nlohmann::json>> parse_sse(const std::string& body) {
  std::vector<std::pair<std::string, nlohmann::json>> events;
  std::istringstream in(body);
  std::string line, type, data;
  while (std::getline(in, line)) {
    if (line.rfind("event: ", 0) == 0) type = line.substr(7);
    else if (line.rfind("data: ", 0) == 0) data += line.substr(6);
    else if (line.empty() && !type.empty()) {
      events.emplace_back(type, nlohmann::json::parse(data, nullptr, false));
      type.clear();
      data.clear();
    }
  }
  return events;
}

Outcome interface_checks(Env& env) {
  Checker c;
  const auto t0 = Clock::now();
  const auto table = quote(fixture("tables/three_rows.csv"));
  auto ask = [&](const std::string& script, const std::string& extra = {}) {
    return run_command(cli() + " ask " + table + " -q 'What is the answer?' --mock " +
                       quote(fixture("tables/" + script)) + " " + extra);
  };
  auto ok = ask("answer42_script.json");
  c.expect(ok.exit_code == 0 && ok.output.find("Final Answer: 42") != std::string::npos,
           fmt::format("ask exited {}: {}", ok.exit_code, ok.output));
  c.expect(ask("answer42_script.json", "--mode bogus").exit_code == 2, "ask with a bad mode did not exit 2");
  c.expect(ask("backend_error_script.json").exit_code == 3, "ask with a failing backend did not exit 3");
  c.expect(ask("tool_error_script.json").exit_code == 4, "ask with failing code did not exit 4");

  auto filt = run_command(cli() + " filter " + quote(fixture("filter/violators.jsonl")) + " --mock " +
                          quote(fixture("filter/judge.json")) + " -o " + quote(env.root / "kept.jsonl"));
  c.expect(filt.exit_code == 0 && filt.output.find("removed 4") != std::string::npos,
           fmt::format("filter exited {}: {}", filt.exit_code, filt.output));
  oracle::write_file(env.root / "broken.jsonl", "{not json\n");
  c.expect(run_command(cli() + " filter " + quote(env.root / "broken.jsonl") + " --mock " +
                       quote(fixture("filter/judge.json")))
                   .exit_code == 2,
           "filter on malformed JSONL did not exit 2");

  auto sparse = run_command(cli() + " preprocess " + quote(fixture("preprocess/05_sparse80.csv")));
  c.expect(sparse.exit_code == 2 && sparse.output.find("TooSparse") != std::string::npos,
           fmt::format("preprocess on a sparse table exited {}: {}", sparse.exit_code, sparse.output));
  c.expect(run_command(cli() + " preprocess " + quote(fixture("preprocess/01_simple.csv"))).exit_code == 0,
           "preprocess on a clean table failed");

  // CLI trace replay, plus a tampered trace that must not replay.
  const auto trace_path = env.root / "cli_trace.json";
  auto two = ask("two_step_script.json", "--trace " + quote(trace_path));
  c.expect(two.exit_code == 0, "two-step ask failed: " + two.output);
  auto replay = run_command(cli() + " replay " + quote(trace_path) + " -t " + table);
  c.expect(replay.exit_code == 0 && replay.output.find("identical") != std::string::npos,
           "CLI replay: " + replay.output);
  auto doc = nlohmann::json::parse(oracle::read_file(trace_path), nullptr, false);
  if (!doc.is_discarded() && !doc["steps"].empty()) {
    doc["steps"][0]["tool_result"]["text"] = "tampered";
    oracle::write_file(env.root / "tampered.json", doc.dump(2));
    c.expect(run_command(cli() + " replay " + quote(env.root / "tampered.json") + " -t " + table).exit_code == 4,
             "tampered trace replayed as identical");
  }

  // HTTP service with a mock backend.
  EngineConfig cfg;
  cfg.data_dir = env.root / "service";
  auto backend = MockBackend::from_file(fixture("tables/two_step_script.json").string());
  Service svc(cfg, backend, env.sandbox);
  const int port = svc.bind("127.0.0.1", 0);
  c.expect(port > 0, "service did not bind");
  std::thread server([&] { svc.listen_after_bind(); });
  httplib::Client http("127.0.0.1", port);
  http.set_read_timeout(30, 0);
  httplib::MultipartFormDataItems form{
      {"file", oracle::read_file(fixture("tables/three_rows.csv")), "three_rows.csv", "text/csv"}};
  auto up = http.Post("/v1/tables", form);
  std::string table_id;
  if (up && up->status == 201) {
    auto j = nlohmann::json::parse(up->body);
    c.expect(j["metadata"]["rows"] == 3, "uploaded table metadata rows != 3");
    table_id = j["table_id"];
  } else {
    c.expect(false, fmt::format("upload status {}", up ? up->status : -1));
  }
  auto created = http.Post("/v1/sessions",
                           nlohmann::json{{"question", "How many rows are there?"}, {"table_ids", {table_id}}}.dump(),
                           "application/json");
  std::string sid;
  if (created && created->status == 202) sid = nlohmann::json::parse(created->body)["session_id"];
  else c.expect(false, fmt::format("session status {}", created ? created->status : -1));
  std::vector<std::string> kinds;
  if (!sid.empty()) {
    auto stream = http.Get("/v1/sessions/" + sid + "/events");
    c.expect(stream && stream->status == 200 &&
                 stream->get_header_value("Content-Type").rfind("text/event-stream", 0) == 0,
             "event stream request failed");
    if (stream)
      for (const auto& [type, data] : parse_sse(stream->body))
        if (type == "step" || type == "final") kinds.push_back(type);
    c.expect(kinds == std::vector<std::string>{"step", "step", "final"}, "event sequence was not step, step, final");
    auto resumed = http.Get("/v1/sessions/" + sid + "/events", {{"Last-Event-ID", "1"}});
    c.expect(resumed && !parse_sse(resumed->body).empty() &&
                 resumed->body.find("id: 1\n") == std::string::npos,
             "Last-Event-ID resume replayed event 1");
  }
  auto missing = http.Get("/v1/sessions/ffffffffffffffff");
  c.expect(missing && missing->status == 404, "unknown session did not return 404");
  svc.drain();
  svc.stop();
  server.join();

  // The persisted trace replays through the CLI.
  const auto persisted = cfg.data_dir / "sessions" / (sid + ".json");
  c.expect(fs::exists(persisted), "session trace not persisted");
  if (fs::exists(persisted)) {
    auto rep = run_command(cli() + " replay " + quote(persisted) + " -t " + table);
    c.expect(rep.exit_code == 0 && rep.output.find("identical") != std::string::npos,
             "persisted trace replay: " + rep.output);
  }
  return c.done(fmt::format("exit codes 0/2/3/4 as specified, filter removed 4, SSE step/step/final, 404, replay "
                            "identical; {:.1f}s",
                            seconds_since(t0)));
}

} // namespace

int main() {
  const auto t0 = Clock::now();
  Env env;
  env.root = fs::temp_directory_path() / ("tabflow-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(env.root);
  fs::create_directories(env.root);
  SandboxConfig sc;
  sc.work_root = env.root / "sandbox";
  env.sandbox = std::make_shared<Sandbox>(sc);

  // Writable locations the sandboxed code could reach, minus the harness
  // directory. The home directory is covered by a write probe instead, since
  // other host processes may write there during the run.
  auto snapshot = [&] {
    return oracle::fs_snapshot({fs::temp_directory_path(), fs::current_path(), fs::path(TABFLOW_TEST_FIXTURES)},
                               {env.root});
  };
  const auto before = snapshot();

  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    Outcome result;
  };
  std::vector<Criterion> criteria{
      {"filter constants and boundaries", [&] { return filter_constants(env); }, {}},
      {"duplicate n-gram count equals brute force", [&] { return ngram_equivalence(env); }, {}},
      {"category balancing weights and resampling", [&] { return balancing(env); }, {}},
      {"group-relative objective, advantages, gradient", [&] { return grpo_checks(env); }, {}},
      {"preprocess golden suite and idempotence", [&] { return preprocess_golden(env); }, {}},
      {"metadata missing-count conservation", [&] { return sensing_conservation(env); }, {}},
      {"end-to-end iterative session on the growth-rate case", [&] { return icot_case1(env); }, {}},
      {"chart rendering, inversion and schema fuzz", [&] { return charttool_checks(env); }, {}},
      {"sandbox timeout, filesystem confinement, table hand-off",
       [&] { return sandbox_checks(env, before, snapshot); }, {}},
      {"synthesis reproducibility", [&] { return synthesis_checks(env); }, {}},
      {"CLI and HTTP service contract", [&] { return interface_checks(env); }, {}},
  };
  // The filesystem check runs after every other sandbox user; the CLI
  // criterion spawns its own processes and so runs last.
  const std::vector<std::size_t> order{0, 1, 2, 3, 4, 5, 6, 7, 9, 8, 10};
  for (auto i : order) {
    try {
      criteria[i].result = criteria[i].run();
    } catch (const std::exception& e) {
      criteria[i].result = {false, std::string("exception: ") + e.what()};
    }
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& r = criteria[i].result;
    failed += !r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].name << ": " << r.detail << "\n";
  }
  const double total = seconds_since(t0);
  std::cout << fmt::format("{} of {} criteria passed in {:.1f}s\n", criteria.size() - failed, criteria.size(), total);
  std::error_code ec;
  fs::remove_all(env.root, ec);
  return failed ? 1 : 0;
}
