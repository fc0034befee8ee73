// SPDX-License-Identifier: Apache-2.0
#include "tabflow/corpus_filter.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/error.hpp"
#include "tabflow/text_util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <regex>
#include <thread>
#include <unordered_map>

namespace tabflow::corpus {

namespace {

const std::vector<std::pair<std::string, std::vector<std::string>>>& taxonomy() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> t{
      {"Natural Language Understanding",
       {"Understanding", "Instruction Following", "Code Generation", "Hallucination Evaluation",
        "Robustness Evaluation", "Mathematical Reasoning", "Planning", "Tool Invocation"}},
      {"Table Understanding",
       {"Table Retrieval", "Table Summary", "Table Column Naming", "Table Title Naming",
        "Table Fact Checking", "Table Plausibility Verification"}},
      {"Table Basic Operation",
       {"Table Query", "Table Selection", "Table Ranking", "Table Imputation", "Table Deletion"}},
      {"Table Computational Operation",
       {"Table General Operations", "Table Domain-specific Operations"}},
      {"Data Analysis",
       {"Table Null Imputation", "Table Outlier Detection", "Table Correlation Analysis",
        "Table Hypothesis Testing", "Table Distribution Testing", "Table Visualization"}},
      {"Advanced Data Analysis",
       {"Multi-step Retrieval", "Multi-step Fact Checking", "Multi-step Operations",
        "Multi-step Correlation Analysis", "Multi-step Hypothesis Testing",
        "Multi-step Conditional Calculation", "Pivot Transformation"}},
  };
  return t;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x3040 && cp <= 0x30FF) || (cp >= 0xAC00 && cp <= 0xD7AF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x20000 && cp <= 0x2FA1F);
}

bool is_separator(char32_t cp) {
  if (cp < 0x80) return !(std::isalnum(static_cast<int>(cp)) || cp == '_');
  return (cp >= 0x2000 && cp <= 0x206F) || (cp >= 0x3000 && cp <= 0x303F) ||
         (cp >= 0xFF00 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
         (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65) || cp == 0x00A0 ||
         (cp >= 0x00A1 && cp <= 0x00BF) || cp == 0x00D7 || cp == 0x00F7 || cp == 0xFEFF ||
         cp == 0xFFFD;
}

std::string judge_prompt(const CorpusSample& s) {
  std::string p =
      "Rate the following training sample on a scale from 0 to 10, considering correctness, "
      "completeness, clarity and safety. Reply with a line of the form 'Score: <number>'.\n\n";
  p += "Question:\n" + s.question + "\n\n";
  if (s.reasoning) p += "Reasoning:\n" + *s.reasoning + "\n\n";
  p += "Answer:\n" + s.answer + "\n";
  return p;
}

} // namespace

const std::vector<std::string>& capabilities() {
  static const std::vector<std::string> caps = [] {
    std::vector<std::string> c;
    for (const auto& [cap, _] : taxonomy()) c.push_back(cap);
    return c;
  }();
  return caps;
}

const std::vector<std::string>& subtasks() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> s;
    for (const auto& [_, subs] : taxonomy()) s.insert(s.end(), subs.begin(), subs.end());
    return s;
  }();
  return all;
}

const std::string& capability_of(const std::string& subtask) {
  for (const auto& [cap, subs] : taxonomy())
    if (std::find(subs.begin(), subs.end(), subtask) != subs.end()) return cap;
  throw Error(ErrorCode::NotFound, "unknown sub-task '" + subtask + "'");
}

CorpusSample CorpusSample::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "sample must be a JSON object");
  auto str = [&](const char* key, bool required) -> std::string {
    if (!j.contains(key) || j.at(key).is_null()) {
      if (required) throw Error(ErrorCode::InvalidArgument, std::string("missing field '") + key + "'");
      return {};
    }
    if (!j.at(key).is_string())
      throw Error(ErrorCode::InvalidArgument, std::string("field '") + key + "' must be a string");
    return j.at(key).get<std::string>();
  };
  CorpusSample s;
  s.id = str("id", true);
  s.question = str("question", true);
  s.answer = str("answer", true);
  if (text::trim(s.question).empty() || text::trim(s.answer).empty())
    throw Error(ErrorCode::InvalidArgument, "sample " + s.id + ": question and answer must be non-empty");
  if (j.contains("reasoning") && !j.at("reasoning").is_null()) s.reasoning = str("reasoning", false);
  s.category = str("category", true);
  const auto& caps = capabilities();
  if (std::find(caps.begin(), caps.end(), s.category) == caps.end())
    throw Error(ErrorCode::InvalidArgument, "sample " + s.id + ": unknown category '" + s.category + "'");
  s.subtask = str("subtask", false);
  if (!s.subtask.empty() && s.subtask != "unclassified") capability_of(s.subtask);
  if (j.contains("meta")) s.meta = j.at("meta");
  return s;
}

nlohmann::json CorpusSample::to_json() const {
  nlohmann::json j = {{"id", id}, {"question", question}, {"answer", answer}};
  if (reasoning) j["reasoning"] = *reasoning;
  j["category"] = category;
  if (!subtask.empty()) j["subtask"] = subtask;
  j["meta"] = meta;
  return j;
}

std::vector<CorpusSample> read_jsonl(std::string_view text_in) {
  std::vector<CorpusSample> out;
  std::size_t line_no = 0;
  for (const auto& line : text::split(text_in, '\n')) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw Error(ErrorCode::InvalidArgument, fmt::format("line {}: invalid JSON", line_no));
    try {
      out.push_back(CorpusSample::from_json(j));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

std::string write_jsonl(const std::vector<CorpusSample>& samples) {
  std::string out;
  for (const auto& s : samples) out += s.to_json().dump() + "\n";
  return out;
}

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string cur;
  std::size_t pos = 0;
  while (pos < s.size()) {
    char32_t cp = text::next_codepoint(s, pos);
    if (is_separator(cp)) {
      if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
    } else if (is_cjk(cp)) {
      if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
      std::string one;
      text::append_utf8(one, cp);
      tokens.push_back(std::move(one));
    } else {
      if (cp < 0x80) cp = static_cast<char32_t>(std::tolower(static_cast<int>(cp)));
      text::append_utf8(cur, cp);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

const std::set<std::string>& default_low_info_vocab() {
  static const std::set<std::string> v{
      // function words
      "a", "an", "the", "this", "that", "these", "those", "it", "its", "is", "are", "was", "were",
      "be", "been", "being", "am", "do", "does", "did", "have", "has", "had", "of", "in", "on",
      "at", "to", "for", "with", "by", "from", "as", "into", "about", "than", "then", "so", "and",
      "or", "if", "we", "i", "you", "he", "she", "they", "them", "us", "me", "my", "our", "your",
      "their", "there", "here", "which", "what", "who", "when", "where", "how", "can", "could",
      "would", "should", "will", "shall", "may", "might", "must", "not", "no", "also", "just",
      "let", "lets", "s",
      // vague modifiers
      "very", "really", "quite", "rather", "somewhat", "fairly", "pretty", "maybe", "perhaps",
      "probably", "possibly", "basically", "actually", "generally", "essentially", "kind",
      "sort", "some", "something", "anything", "thing", "things", "stuff", "etc", "various",
      "certain", "overall", "simply", "clearly", "obviously", "definitely", "literally", "like",
      "okay", "ok", "well", "hmm", "um", "uh", "anyway", "again", "still", "even", "much", "many",
      "lot", "lots", "bit",
      // contrastive conjunctions and fillers
      "but", "however", "although", "though", "yet", "whereas", "while", "nevertheless",
      "nonetheless", "instead", "otherwise", "still", "wait", "alternatively", "meanwhile",
      "now", "right", "think", "see", "look", "know", "mean", "say", "guess", "seems", "seem",
  };
  return v;
}

void FilterConfig::validate() const {
  if (tau_tok == 0 || tau_char == 0 || ngram_n == 0 || tau_dup == 0 || !(tau_low > 0) ||
      !(tau_score > 0))
    throw Error(ErrorCode::InvalidArgument, "filter thresholds must be positive");
  if (low_info_vocab.empty()) throw Error(ErrorCode::InvalidArgument, "low-information vocabulary is empty");
  if (judge_retries < 0) throw Error(ErrorCode::InvalidArgument, "judge_retries must be >= 0");
}

FilterConfig FilterConfig::from_json(const nlohmann::json& j) {
  FilterConfig c;
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "filter config must be an object");
  try {
    c.tau_tok = j.value("tau_tok", c.tau_tok);
    c.tau_char = j.value("tau_char", c.tau_char);
    c.ngram_n = j.value("ngram_n", c.ngram_n);
    c.tau_dup = j.value("tau_dup", c.tau_dup);
    c.tau_low = j.value("tau_low", c.tau_low);
    c.tau_score = j.value("tau_score", c.tau_score);
    c.judge_retries = j.value("judge_retries", c.judge_retries);
    c.judge_workers = j.value("judge_workers", c.judge_workers);
    if (j.contains("low_info_vocab")) {
      c.low_info_vocab.clear();
      for (const auto& w : j.at("low_info_vocab")) c.low_info_vocab.insert(text::to_lower(w.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("filter config: ") + e.what());
  }
  c.validate();
  return c;
}

std::size_t count_duplicate_ngrams(const std::vector<std::string>& tokens, std::size_t n,
                                   std::uint64_t hash_mask) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "n-gram size must be at least 1");
  if (tokens.size() < n) return 0;

  std::unordered_map<std::string_view, std::uint64_t> ids;
  std::vector<std::uint64_t> seq;
  seq.reserve(tokens.size());
  for (const auto& t : tokens) seq.push_back(ids.emplace(t, ids.size() + 1).first->second);

  // Polynomial hash mod 2^64 over token ids.
  constexpr std::uint64_t base = 1000003;
  std::uint64_t top = 1;
  for (std::size_t i = 1; i < n; ++i) top *= base;
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < n; ++i) h = h * base + seq[i];

  struct Bucket {
    std::size_t start;
    std::size_t count;
  };
  std::unordered_map<std::uint64_t, std::vector<Bucket>> table;
  std::size_t best = 0;
  for (std::size_t start = 0;; ++start) {
    auto& buckets = table[h & hash_mask];
    Bucket* hit = nullptr;
    for (auto& b : buckets)
      if (std::equal(seq.begin() + static_cast<std::ptrdiff_t>(b.start),
                     seq.begin() + static_cast<std::ptrdiff_t>(b.start + n),
                     seq.begin() + static_cast<std::ptrdiff_t>(start))) {
        hit = &b;
        break;
      }
    if (hit) best = std::max(best, ++hit->count);
    else buckets.push_back({start, 1}), best = std::max<std::size_t>(best, 1);
    if (start + n >= seq.size()) break;
    h = (h - seq[start] * top) * base + seq[start + n];
  }
  return best;
}

std::size_t count_duplicate_ngrams(std::string_view text_in, std::size_t n) {
  return count_duplicate_ngrams(tokenize(text_in), n);
}

std::size_t char_length(std::string_view s) {
  std::size_t count = 0, pos = 0;
  while (pos < s.size()) {
    text::next_codepoint(s, pos);
    ++count;
  }
  return count;
}

bool f_short(const CorpusSample& s, const FilterConfig& cfg) {
  if (s.reasoning && !text::trim(*s.reasoning).empty()) return false;
  return tokenize(s.answer).size() < cfg.tau_tok || char_length(s.answer) < cfg.tau_char;
}

bool f_repeat(const CorpusSample& s, const FilterConfig& cfg) {
  if (!s.reasoning) return false;
  return count_duplicate_ngrams(tokenize(*s.reasoning), cfg.ngram_n) > cfg.tau_dup;
}

double low_info_density(std::string_view reasoning, const std::set<std::string>& vocab) {
  auto tokens = tokenize(reasoning);
  if (tokens.empty()) return 0;
  std::size_t low = 0;
  for (const auto& t : tokens)
    if (vocab.count(t)) ++low;
  return static_cast<double>(low) / static_cast<double>(tokens.size());
}

bool f_density(const CorpusSample& s, const FilterConfig& cfg) {
  if (!s.reasoning) return false;
  return low_info_density(*s.reasoning, cfg.low_info_vocab) > cfg.tau_low;
}

std::optional<double> parse_judge_score(std::string_view response) {
  static const std::regex labelled(R"(score\s*[:=]?\s*\**\s*(-?[0-9]+(?:\.[0-9]+)?)(?:\s*(?:/|out of)\s*([0-9]+(?:\.[0-9]+)?))?)",
                                   std::regex::icase);
  static const std::regex ratio(R"((-?[0-9]+(?:\.[0-9]+)?)\s*(?:/|out of)\s*([0-9]+(?:\.[0-9]+)?))",
                                std::regex::icase);
  const std::string s(response);
  std::smatch m;
  std::optional<double> value;
  if (std::regex_search(s, m, labelled) || std::regex_search(s, m, ratio)) {
    double v = std::stod(m[1].str());
    if (m[2].matched) {
      double scale = std::stod(m[2].str());
      if (!(scale > 0)) return std::nullopt;
      v = v * 10.0 / scale;
    }
    value = v;
  } else {
    value = text::parse_number(text::trim(s));
  }
  if (!value || !std::isfinite(*value) || *value < 0 || *value > 10) return std::nullopt;
  return value;
}

ScoreResult f_score(const CorpusSample& s, ModelBackend& judge, const FilterConfig& cfg) {
  ChatRequest req;
  req.messages = {{"user", judge_prompt(s)}};
  std::string last;
  for (int attempt = 0; attempt <= cfg.judge_retries; ++attempt) {
    last = judge.complete(req);
    if (auto v = parse_judge_score(last)) return {*v < cfg.tau_score, *v};
  }
  throw Error(ErrorCode::JudgeUnparseable,
              "judge reply for sample " + s.id + " has no score: " + last.substr(0, 200));
}

nlohmann::json FilterReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : samples) {
    nlohmann::json r = {{"id", v.id},           {"f_short", v.f_short ? 1 : 0},
                        {"f_repeat", v.f_repeat ? 1 : 0}, {"f_density", v.f_density ? 1 : 0},
                        {"f_score", v.f_score ? 1 : 0}, {"dup", v.dup},
                        {"density", v.density},  {"retained", v.retained}};
    r["score"] = v.score ? nlohmann::json(*v.score) : nlohmann::json(nullptr);
    if (!v.note.empty()) r["note"] = v.note;
    rows.push_back(std::move(r));
  }
  return {{"total", samples.size()},
          {"retained", retained},
          {"removed", samples.size() - retained},
          {"counts", counts},
          {"manual_review", manual_review},
          {"samples", std::move(rows)}};
}

FilterResult filter_dataset(const std::vector<CorpusSample>& samples, const FilterConfig& cfg,
                            ModelBackend& judge) {
  cfg.validate();
  FilterResult result;
  auto& report = result.report;
  report.samples.resize(samples.size());
  for (const char* rule : {"f_short", "f_repeat", "f_density", "f_score"}) report.counts[rule] = 0;

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto& v = report.samples[i];
    v.id = s.id;
    v.f_short = f_short(s, cfg);
    if (s.reasoning) {
      v.dup = count_duplicate_ngrams(tokenize(*s.reasoning), cfg.ngram_n);
      v.density = low_info_density(*s.reasoning, cfg.low_info_vocab);
    }
    v.f_repeat = s.reasoning && v.dup > cfg.tau_dup;
    v.f_density = s.reasoning && v.density > cfg.tau_low;
  }

  // Judge calls go through a bounded pool of workers pulling indices.
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      auto& v = report.samples[i];
      try {
        auto r = f_score(samples[i], judge, cfg);
        v.f_score = r.flag;
        v.score = r.score;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::JudgeUnparseable && e.code() != ErrorCode::BackendFailure) throw;
        v.f_score = true;
        v.note = e.what();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(cfg.judge_workers, 1, std::max<std::size_t>(1, samples.size()));
  {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work();
        } catch (...) {
          errors[w] = std::current_exception();
          next = samples.size();
        }
      });
    pool.clear();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& v = report.samples[i];
    report.counts["f_short"] += v.f_short;
    report.counts["f_repeat"] += v.f_repeat;
    report.counts["f_density"] += v.f_density;
    report.counts["f_score"] += v.f_score;
    if (!v.note.empty()) report.manual_review.push_back(v.id);
    v.retained = !(v.f_short || v.f_repeat || v.f_density || v.f_score);
    if (v.retained) {
      ++report.retained;
      result.retained.push_back(samples[i]);
    }
  }
  return result;
}

std::map<std::string, double> balancing_weights(const std::map<std::string, double>& proportions,
                                                const std::map<std::string, double>& target) {
  double total = 0;
  for (const auto& [k, t] : target) {
    if (!(t >= 0) || !std::isfinite(t))
      throw Error(ErrorCode::InvalidArgument, "target share for " + k + " must be non-negative");
    total += t;
  }
  if (!(total > 0)) throw Error(ErrorCode::InvalidArgument, "target distribution sums to zero");
  std::map<std::string, double> w;
  for (const auto& [k, t] : target) {
    if (t == 0) {
      w[k] = 0;
      continue;
    }
    auto it = proportions.find(k);
    if (it == proportions.end() || !(it->second > 0))
      throw Error(ErrorCode::EmptyCategory, "category '" + k + "' has no samples");
    w[k] = (t / total) / it->second;
  }
  return w;
}

std::map<std::string, double> category_proportions(const std::vector<std::string>& categories) {
  std::map<std::string, double> p;
  for (const auto& c : categories) p[c] += 1;
  for (auto& [_, v] : p) v /= static_cast<double>(categories.size());
  return p;
}

std::map<std::string, double> balance_categories(const std::vector<CorpusSample>& samples,
                                                 const std::map<std::string, double>& target) {
  std::vector<std::string> cats;
  cats.reserve(samples.size());
  for (const auto& s : samples) cats.push_back(s.category);
  return balancing_weights(category_proportions(cats), target);
}

std::map<std::string, double> uniform_target(const std::vector<std::string>& categories) {
  std::map<std::string, double> t;
  for (const auto& c : categories) t[c] = 1.0 / static_cast<double>(categories.size());
  return t;
}

std::vector<std::size_t> weighted_resample(const std::vector<std::string>& categories,
                                           const std::map<std::string, double>& weights,
                                           std::size_t count, std::uint64_t seed) {
  std::vector<double> w;
  w.reserve(categories.size());
  for (const auto& c : categories) {
    auto it = weights.find(c);
    w.push_back(it == weights.end() ? 0.0 : it->second);
  }
  if (std::none_of(w.begin(), w.end(), [](double x) { return x > 0; }))
    throw Error(ErrorCode::InvalidArgument, "no sample has positive weight");
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = dist(rng);
  return out;
}

const std::vector<KeywordRule>& default_keyword_rules() {
  static const std::vector<KeywordRule> rules{
      {"Multi-step Correlation Analysis",
       R"((multi-?step|several steps|after (filtering|grouping)|for each group|within each).*correlat|correlat.*(after (filtering|grouping)|for each group|within each))"},
      {"Multi-step Hypothesis Testing",
       R"((multi-?step|several steps|after (filtering|grouping)|for each group).*(hypothes|t-?test|significan)|(hypothes|t-?test).*(after (filtering|grouping)|for each group))"},
      {"Pivot Transformation", R"(\bpivot|\bcross-?tab|\breshape\b.*\b(wide|long)\b)"},
      {"Table Visualization", R"(\b(plot|chart|visuali[sz]e|visuali[sz]ation|histogram|graph)\b)"},
      {"Table Null Imputation",
       R"(\b(null|missing|nan|empty|blank)\b.*\b(fill|impute|imputation|replace)|\b(fill|impute|replace)\b.*\b(null|missing|nan|empty|blank)\b)"},
      {"Table Imputation", R"(\b(fill in|impute|imputation|complete the (table|row|cell)|infer the missing)\b)"},
      {"Table Correlation Analysis", R"(\bcorrelat|\bpearson\b|\bspearman\b)"},
      {"Table Hypothesis Testing", R"(\bhypothes|\bt-?test\b|\bp-?value|statistically significant|\bchi-?squared?\b|\banova\b)"},
      {"Table Distribution Testing",
       R"(\bnormality\b|\bshapiro|\bkolmogorov|\bskew|\bdistribut\w*\b.*\b(normal|uniform|poisson|test|follow)|\bnormally distributed\b)"},
      {"Table Column Naming",
       R"(\b(name|rename|label|title)\b.{0,20}\b(column|field)s?\b|\bcolumn (name|header)s?\b.{0,30}\b(suggest|propose|should|would|best)|\bsuggest\b.*\bcolumn names?\b)"},
      {"Table Title Naming", R"(\b(title|name|caption|heading)\b.{0,15}\b(for|of) (the |this )?table\b|\btable (title|caption)\b)"},
      {"Table Summary", R"(\bsummari[sz]|\bsummary\b|\boverview of (the|this) table|\bdescribe (the|this) table)"},
      {"Table Fact Checking",
       R"(\bis it (true|correct)\b|\btrue or false\b|\bfact[- ]?check|\bverify (that|whether|if)\b|\bdoes the table (support|confirm|refute)|\bis (the|this) (statement|claim)\b)"},
      {"Table Ranking",
       R"(\b(sort|rank|order|arrange)\b.*\b(by|ascending|descending|increasing|decreasing)\b|\btop \d+\b|\bbottom \d+\b|\bhighest to lowest\b|\blowest to highest\b)"},
      {"Table Deletion", R"(\b(delete|remove|drop|erase)\b.*\b(rows?|columns?|records?|entr(y|ies)|cells?)\b)"},
      {"Table Selection", R"(\b(select|filter)\b|\blist all\b|\bshow all\b|\b(rows|records|entries) (where|with|that)\b)"},
      {"Table Retrieval",
       R"(\bwhich (cell|row|column)s? (contain|has|have|hold)|\blocate\b|\bin which (row|column)\b|\bfind the (cell|row|column)\b)"},
      {"Code Generation", R"(\b(write|generate|produce)\b.{0,20}\b(python|sql|code|function|script|program)\b)"},
      {"Tool Invocation", R"(\b(call|invoke)\b.{0,20}\b(tool|api|function|endpoint)\b)"},
      {"Instruction Following",
       R"(\bin (exactly|at most|no more than|fewer than) \d+ (words|sentences)\b|\brespond (only )?in json\b|\bformat your answer as\b|\banswer in (one|a single) (word|sentence)\b)"},
      {"Table Query", R"(\bwhat (is|was|are|were) the\b|\bhow (many|much)\b|\bwhich\b[^?]*\?)"},
  };
  return rules;
}

Classification classify_question(std::string_view question, ModelBackend* semantic,
                                 const std::vector<KeywordRule>& rules) {
  const std::string q(question);
  for (const auto& r : rules) {
    std::regex re(r.pattern, std::regex::ECMAScript | std::regex::icase);
    if (std::regex_search(q, re)) return {r.subtask, "keyword"};
  }
  if (!semantic) return {"unclassified", "none"};

  std::string prompt =
      "Classify the table question into exactly one of the sub-tasks below. Reply with the "
      "sub-task name only.\n\nSub-tasks by capability:\n";
  for (const auto& [cap, subs] : taxonomy()) prompt += "- " + cap + ": " + text::join(subs, "; ") + "\n";
  prompt += "\nQuestion:\n" + q + "\n";
  ChatRequest req;
  req.messages = {{"user", prompt}};
  std::string reply;
  try {
    reply = semantic->complete(req);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BackendFailure) throw;
    return {"unclassified", "none"};
  }
  // Longest sub-task name mentioned in the reply wins ("Table Imputation"
  // is a suffix of "Table Null Imputation").
  std::string best;
  auto lower = text::to_lower(reply);
  for (const auto& s : subtasks())
    if (lower.find(text::to_lower(s)) != std::string::npos && s.size() > best.size()) best = s;
  if (best.empty()) return {"unclassified", "semantic"};
  return {best, "semantic"};
}

bool is_parseable_content(std::string_view s) {
  if (text::trim(s).empty() || !text::is_valid_utf8(s)) return false;
  if (s.find("\xEF\xBF\xBD") != std::string_view::npos) return false;
  for (unsigned char c : s)
    if (c < 0x20 && c != '\n' && c != '\r' && c != '\t') return false;
  static const std::regex image(R"(<img\b|data:image/|!\[[^\]]*\]\([^)]*\))", std::regex::icase);
  return !std::regex_search(std::string(s), image);
}

QaVerdict qa_quality_pipeline(const QaItem& item, const std::array<ModelBackend*, 3>& generators,
                              ModelBackend& judge, const QaConfig& cfg) {
  QaVerdict v;
  if (item.rule_generated) {
    v.tier = QualityTier::High;
    v.reason = "rule-generated";
    return v;
  }
  ChatRequest ask;
  std::string prompt;
  if (!item.context.empty()) prompt += "Table:\n" + item.context + "\n\n";
  prompt += "Question:\n" + item.question + "\n\nAnswer concisely.";
  ask.messages = {{"user", prompt}};
  try {
    for (auto* g : generators) {
      if (!g) throw Error(ErrorCode::InvalidArgument, "three candidate generators are required");
      v.candidates.push_back(std::string(text::trim(g->complete(ask))));
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BackendFailure) throw;
    v.reason = std::string("candidate generation failed: ") + e.what();
    return v;
  }

  std::string listing;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < v.candidates.size(); ++i) {
    if (!is_parseable_content(v.candidates[i])) {
      v.excluded.push_back(i);
      continue;
    }
    ++kept;
    listing += fmt::format("Candidate {}: {}\n", i + 1, v.candidates[i]);
  }
  if (kept == 0) {
    v.reason = "no parseable candidate";
    return v;
  }

  ChatRequest jr;
  jr.messages = {{"user",
                  "Judge how consistent the candidate answers are with each other and with the "
                  "ground truth. Reply with 'Score: <0-10>', where 10 means full agreement.\n\n"
                  "Question:\n" + item.question + "\n\nGround truth: " + item.gold + "\n" + listing}};
  try {
    v.score = parse_judge_score(judge.complete(jr));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BackendFailure) throw;
    v.reason = std::string("judge failed: ") + e.what();
    return v;
  }
  if (!v.score) {
    v.reason = "judge reply unparseable";
    return v;
  }
  v.tier = *v.score >= cfg.high_threshold ? QualityTier::High : QualityTier::Low;
  v.reason = fmt::format("agreement score {}", text::format_number(*v.score));
  return v;
}

} // namespace tabflow::corpus
