// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tabflow/table.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tabflow {

/// Simple: one header row, no merged header cells. Complex: deeper header
/// block or merged header cells. `synthetic` marks tables whose first row is
/// data, in which case names "col0".."colN" are generated.
struct HeaderClass {
  enum class Kind { Simple, Complex };
  Kind kind = Kind::Simple;
  std::size_t header_rows = 1;
  bool merged = false;
  bool synthetic = false;

  bool is_simple() const { return kind == Kind::Simple; }
};

struct SplitTable {
  Grid header_block;
  Grid body_block;
  /// Merge regions intersecting the header block, in header coordinates.
  std::vector<MergeRegion> header_merges;
  std::size_t split_row = 0;
  bool synthetic_header = false;
};

struct PreprocessConfig {
  std::size_t max_header_depth = 3;
  /// Case-insensitive prefixes marking an annotation cell in column 0.
  std::vector<std::string> annotation_prefixes{"note:", "*", "\xE2\x80\xA0"};
  std::vector<std::string> currency_symbols{"$", "\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5",
                                            "\xE2\x82\xB9"};
  std::vector<std::string> percent_symbols{"%"};
  double max_missing_fraction = 0.70;
  /// Optional override for header detection (e.g. a model-backed classifier).
  std::function<std::optional<HeaderClass>(const RawTable&)> header_hook;

  static PreprocessConfig from_json(std::string_view json_text);
};

/// Body after missing-value resolution plus the per-column units it moved out.
struct ResolvedBody {
  Grid body;
  std::vector<std::optional<std::string>> units;
};

HeaderClass classify_header(const RawTable& t, const PreprocessConfig& cfg = {});
SplitTable split_header_body(const RawTable& t, const PreprocessConfig& cfg = {});
std::vector<std::string> standardize_header(const Grid& header,
                                            const std::vector<MergeRegion>& merges = {});
Grid clean_body(const Grid& body, const PreprocessConfig& cfg = {});
ResolvedBody resolve_missing(const Grid& body, const PreprocessConfig& cfg = {});

/// Header path and body path composed after the split.
ProcessedTable preprocess(const RawTable& t, const PreprocessConfig& cfg = {});

/// Equality on header names and cell text; units and provenance excluded.
bool same_content(const ProcessedTable& a, const ProcessedTable& b);

} // namespace tabflow
