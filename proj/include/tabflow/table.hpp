// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tabflow {

struct Null {
  friend bool operator==(Null, Null) = default;
};

struct Date {
  std::string iso;
  friend bool operator==(const Date&, const Date&) = default;
};

/// A single table cell. Null is the one canonical missing marker; Number is
/// always finite and Date always holds ISO-8601 text.
class CellValue {
public:
  using Storage = std::variant<Null, std::string, double, bool, Date>;

  CellValue() = default;
  static CellValue null() { return CellValue(); }
  static CellValue text(std::string s) { return CellValue(Storage(std::move(s))); }
  static CellValue number(double v);
  static CellValue boolean(bool b) { return CellValue(Storage(b)); }
  static CellValue date(std::string iso);

  bool is_null() const { return std::holds_alternative<Null>(v_); }
  bool is_text() const { return std::holds_alternative<std::string>(v_); }
  bool is_number() const { return std::holds_alternative<double>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_date() const { return std::holds_alternative<Date>(v_); }

  const std::string& as_text() const { return std::get<std::string>(v_); }
  double as_number() const { return std::get<double>(v_); }
  bool as_bool() const { return std::get<bool>(v_); }
  const Date& as_date() const { return std::get<Date>(v_); }

  /// Verbatim text form; Null renders as the empty string.
  std::string to_text() const;

  const Storage& storage() const { return v_; }
  friend bool operator==(const CellValue&, const CellValue&) = default;

private:
  explicit CellValue(Storage v) : v_(std::move(v)) {}
  Storage v_;
};

using Row = std::vector<CellValue>;
using Grid = std::vector<Row>;

/// Inclusive rectangle of merged cells.
struct MergeRegion {
  std::size_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;

  bool contains(std::size_t r, std::size_t c) const {
    return r >= row0 && r <= row1 && c >= col0 && c <= col1;
  }
  bool overlaps(const MergeRegion& o) const {
    return row0 <= o.row1 && o.row0 <= row1 && col0 <= o.col1 && o.col0 <= col1;
  }
  friend bool operator==(const MergeRegion&, const MergeRegion&) = default;
};

class RawTable {
public:
  RawTable() = default;
  /// Pads ragged rows with Null and validates merges (throws InvalidArgument).
  RawTable(Grid cells, std::vector<MergeRegion> merges = {}, std::string source_name = {});

  std::size_t rows() const { return cells_.size(); }
  std::size_t cols() const { return cols_; }
  const Grid& cells() const { return cells_; }
  const CellValue& at(std::size_t r, std::size_t c) const { return cells_[r][c]; }
  const std::vector<MergeRegion>& merges() const { return merges_; }
  const std::string& source_name() const { return source_name_; }

  void set_merges(std::vector<MergeRegion> merges);
  void set_source_name(std::string name) { source_name_ = std::move(name); }

private:
  Grid cells_;
  std::size_t cols_ = 0;
  std::vector<MergeRegion> merges_;
  std::string source_name_;
};

struct ProcessedTable {
  std::vector<std::string> header;
  Grid body;
  std::vector<std::string> provenance;
  /// Per-column unit symbol moved out of the cells ("$", "%"), if any.
  std::vector<std::optional<std::string>> units;
  std::string source_name;

  std::size_t rows() const { return body.size(); }
  std::size_t cols() const { return header.size(); }
};

struct Violation {
  std::string rule_id;
  std::string message;
  friend bool operator==(const Violation&, const Violation&) = default;
};

struct QualityReport {
  bool passed = true;
  std::vector<Violation> violations;
  bool has(std::string_view rule_id) const;
};

enum class TableFormat { CSV, TSV };

struct ParseOptions {
  /// Cell texts (after trimming) that become Null at ingest.
  std::vector<std::string> missing_markers{"", "NA", "N/A", "null", "-", "\xE2\x80\x94"};
};

/// RFC-4180 parse. Ragged rows are padded with Null; no typing happens here.
RawTable parse_table(std::string_view bytes, TableFormat format,
                     const ParseOptions& options = {});

/// Loads a sidecar merge map: JSON list of [row0, col0, row1, col1].
std::vector<MergeRegion> parse_merge_sidecar(std::string_view json_text);

inline constexpr std::uint64_t kMaxTableBytes = 100ull * 1024 * 1024;

QualityReport check_collection_standards(const RawTable& t, std::uint64_t byte_size);

std::string serialize_csv(const ProcessedTable& t);

/// Writes one RFC-4180 record (no trailing newline).
std::string csv_record(const std::vector<std::string>& fields, char sep = ',');

} // namespace tabflow
