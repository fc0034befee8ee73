// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tabflow {

class ModelBackend;

namespace corpus {

/// The six capabilities, in the order used by reports.
const std::vector<std::string>& capabilities();
/// All 34 sub-task names.
const std::vector<std::string>& subtasks();
/// Capability that owns a sub-task; throws Error(NotFound) otherwise.
const std::string& capability_of(const std::string& subtask);

struct CorpusSample {
  std::string id;
  std::string question;
  std::string answer;
  std::optional<std::string> reasoning;
  std::string category;
  std::string subtask;
  nlohmann::json meta = nlohmann::json::object();

  /// "CORPUS/1" line format. Throws Error(InvalidArgument).
  static CorpusSample from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

std::vector<CorpusSample> read_jsonl(std::string_view text);
std::string write_jsonl(const std::vector<CorpusSample>& samples);

/// Words, numbers and single CJK characters; punctuation and whitespace
/// separate tokens and are dropped.
std::vector<std::string> tokenize(std::string_view text);

/// Default low-information vocabulary: function words, vague modifiers and
/// contrastive conjunctions.
const std::set<std::string>& default_low_info_vocab();

struct FilterConfig {
  std::size_t tau_tok = 5;
  std::size_t tau_char = 25;
  std::size_t ngram_n = 10;
  std::size_t tau_dup = 20;
  double tau_low = 0.5;
  double tau_score = 8.5;
  std::set<std::string> low_info_vocab = default_low_info_vocab();
  /// Judge attempts per sample beyond the first.
  int judge_retries = 2;
  /// Concurrent judge calls.
  std::size_t judge_workers = 4;

  void validate() const;
  static FilterConfig from_json(const nlohmann::json& j);
};

/// Maximum occurrence count over all n-grams of `tokens` (0 when there are
/// fewer than n tokens). Rolling hash with every hash hit verified against
/// the token window; `hash_mask` narrows the hash to force collisions.
std::size_t count_duplicate_ngrams(const std::vector<std::string>& tokens, std::size_t n,
                                   std::uint64_t hash_mask = ~std::uint64_t{0});
std::size_t count_duplicate_ngrams(std::string_view text, std::size_t n);

/// Number of code points.
std::size_t char_length(std::string_view s);

bool f_short(const CorpusSample& s, const FilterConfig& cfg = {});
bool f_repeat(const CorpusSample& s, const FilterConfig& cfg = {});
bool f_density(const CorpusSample& s, const FilterConfig& cfg = {});
/// L(r) / T(r); 0 for an empty trace.
double low_info_density(std::string_view reasoning, const std::set<std::string>& vocab);

/// Reads "Score: 9", "9/10", "8.5 out of 10" or a bare number; the result is
/// on [0, 10] or nullopt.
std::optional<double> parse_judge_score(std::string_view response);

struct ScoreResult {
  bool flag = false;
  double score = 0;
};

/// Asks the judge up to 1 + judge_retries times. Throws Error(JudgeUnparseable).
ScoreResult f_score(const CorpusSample& s, ModelBackend& judge, const FilterConfig& cfg = {});

struct SampleVerdict {
  std::string id;
  bool f_short = false;
  bool f_repeat = false;
  bool f_density = false;
  bool f_score = false;
  std::optional<double> score;
  std::size_t dup = 0;
  double density = 0;
  bool retained = false;
  /// Set when the judge could not be scored; such samples go to manual review.
  std::string note;
};

struct FilterReport {
  std::vector<SampleVerdict> samples;
  std::map<std::string, std::size_t> counts;  // hits per rule
  std::size_t retained = 0;
  std::vector<std::string> manual_review;

  nlohmann::json to_json() const;
};

struct FilterResult {
  std::vector<CorpusSample> retained;
  FilterReport report;
};

/// D_final: the samples whose four flags are all zero.
FilterResult filter_dataset(const std::vector<CorpusSample>& samples, const FilterConfig& cfg,
                            ModelBackend& judge);

/// w_k = p_target_k / p_k. Targets are normalized to sum to 1. Throws
/// Error(EmptyCategory) when a targeted category has p_k = 0.
std::map<std::string, double> balancing_weights(const std::map<std::string, double>& proportions,
                                                const std::map<std::string, double>& target);
std::map<std::string, double> category_proportions(const std::vector<std::string>& categories);
std::map<std::string, double> balance_categories(const std::vector<CorpusSample>& samples,
                                                 const std::map<std::string, double>& target);
/// Equal share for every capability.
std::map<std::string, double> uniform_target(const std::vector<std::string>& categories);

/// Indices drawn with replacement, each sample weighted by w of its
/// category. Same seed, same draw.
std::vector<std::size_t> weighted_resample(const std::vector<std::string>& categories,
                                           const std::map<std::string, double>& weights,
                                           std::size_t count, std::uint64_t seed);

struct KeywordRule {
  std::string subtask;
  std::string pattern;  // ECMAScript, case-insensitive
};

/// 21 rules, specific before general.
const std::vector<KeywordRule>& default_keyword_rules();

struct Classification {
  std::string subtask;  // "unclassified" when nothing decides
  std::string method;   // "keyword", "semantic" or "none"
};

Classification classify_question(std::string_view question, ModelBackend* semantic = nullptr,
                                 const std::vector<KeywordRule>& rules = default_keyword_rules());

/// True for non-empty, valid UTF-8 text free of image markup and corrupted
/// bytes.
bool is_parseable_content(std::string_view s);

enum class QualityTier { High, Low };

struct QaItem {
  std::string question;
  std::string gold;
  std::string context;  // table text shown to the candidate models
  bool rule_generated = false;
};

struct QaConfig {
  double high_threshold = 8.0;  // judge agreement score on [0, 10]
};

struct QaVerdict {
  QualityTier tier = QualityTier::Low;
  std::optional<double> score;
  std::vector<std::string> candidates;
  std::vector<std::size_t> excluded;  // candidate indices removed by the content filter
  std::string reason;
};

QaVerdict qa_quality_pipeline(const QaItem& item, const std::array<ModelBackend*, 3>& generators,
                              ModelBackend& judge, const QaConfig& cfg = {});

} // namespace corpus
} // namespace tabflow
