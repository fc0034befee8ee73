// SPDX-License-Identifier: Apache-2.0
#include "tabflow/table.hpp"

#include "tabflow/error.hpp"
#include "tabflow/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace tabflow {

CellValue CellValue::number(double v) {
  if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite number cell");
  return CellValue(Storage(v));
}

CellValue CellValue::date(std::string iso) {
  if (!text::is_iso_date(iso))
    throw Error(ErrorCode::InvalidArgument, "not an ISO-8601 date: " + iso);
  return CellValue(Storage(Date{std::move(iso)}));
}

std::string CellValue::to_text() const {
  struct Visitor {
    std::string operator()(Null) const { return {}; }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(double d) const { return text::format_number(d); }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(const Date& d) const { return d.iso; }
  };
  return std::visit(Visitor{}, v_);
}

RawTable::RawTable(Grid cells, std::vector<MergeRegion> merges, std::string source_name)
    : cells_(std::move(cells)), source_name_(std::move(source_name)) {
  for (const auto& row : cells_) cols_ = std::max(cols_, row.size());
  for (auto& row : cells_) row.resize(cols_);
  set_merges(std::move(merges));
}

void RawTable::set_merges(std::vector<MergeRegion> merges) {
  for (std::size_t i = 0; i < merges.size(); ++i) {
    const auto& m = merges[i];
    if (m.row0 > m.row1 || m.col0 > m.col1 || m.row1 >= rows() || m.col1 >= cols())
      throw Error(ErrorCode::InvalidArgument, "merge region out of bounds");
    for (std::size_t j = 0; j < i; ++j)
      if (m.overlaps(merges[j]))
        throw Error(ErrorCode::InvalidArgument, "merge regions overlap");
  }
  merges_ = std::move(merges);
}

bool QualityReport::has(std::string_view rule_id) const {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const Violation& v) { return v.rule_id == rule_id; });
}

RawTable parse_table(std::string_view bytes, TableFormat format, const ParseOptions& options) {
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xEF &&
      static_cast<unsigned char>(bytes[1]) == 0xBB && static_cast<unsigned char>(bytes[2]) == 0xBF)
    bytes.remove_prefix(3);
  if (!text::is_valid_utf8(bytes)) throw Error(ErrorCode::DecodeError, "input is not valid UTF-8");

  const char sep = format == TableFormat::CSV ? ',' : '\t';
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < bytes.size(); ++i) {
    char c = bytes[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == sep) {
      end_field();
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < bytes.size() && bytes[i + 1] == '\n') ++i;
      end_record();
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  // A final line without a newline still forms a record.
  if (field_started || !field.empty() || !record.empty()) end_record();

  // Trailing blank lines are not rows.
  while (!records.empty() && records.back().size() == 1 && records.back()[0].empty())
    records.pop_back();
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "input has zero rows");

  Grid grid;
  grid.reserve(records.size());
  for (auto& rec : records) {
    Row row;
    row.reserve(rec.size());
    for (auto& f : rec) {
      auto trimmed = text::trim(f);
      bool missing = std::find(options.missing_markers.begin(), options.missing_markers.end(),
                               trimmed) != options.missing_markers.end();
      row.push_back(missing ? CellValue::null() : CellValue::text(std::move(f)));
    }
    grid.push_back(std::move(row));
  }
  return RawTable(std::move(grid));
}

std::vector<MergeRegion> parse_merge_sidecar(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("merge sidecar: ") + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "merge sidecar must be a JSON list");
  std::vector<MergeRegion> out;
  for (const auto& item : j) {
    if (!item.is_array() || item.size() != 4)
      throw Error(ErrorCode::InvalidArgument, "merge entry must be [row0,col0,row1,col1]");
    for (const auto& v : item)
      if (!v.is_number_unsigned())
        throw Error(ErrorCode::InvalidArgument, "merge coordinates must be non-negative integers");
    out.push_back({item[0].get<std::size_t>(), item[1].get<std::size_t>(),
                   item[2].get<std::size_t>(), item[3].get<std::size_t>()});
  }
  return out;
}

namespace {

bool row_empty(const Row& row) {
  return std::all_of(row.begin(), row.end(), [](const CellValue& c) { return c.is_null(); });
}

bool is_corrupt_text(const std::string& s) {
  if (s.find("\xEF\xBF\xBD") != std::string::npos) return true; // U+FFFD
  for (unsigned char c : s)
    if (c < 0x20 && c != '\t' && c != '\n' && c != '\r') return true;
  auto lower = text::to_lower(s);
  return lower.find("<img") != std::string::npos || lower.find("data:image/") != std::string::npos;
}

} // namespace

QualityReport check_collection_standards(const RawTable& t, std::uint64_t byte_size) {
  QualityReport report;
  auto add = [&](std::string id, std::string msg) {
    report.violations.push_back({std::move(id), std::move(msg)});
  };

  if (t.rows() == 0 || row_empty(t.cells()[0]))
    add("first-row-nonempty", "table must have a non-empty first row");
  bool first_col_empty = true;
  for (const auto& row : t.cells())
    if (!row.empty() && !row[0].is_null()) first_col_empty = false;
  if (t.rows() == 0 || first_col_empty)
    add("first-col-nonempty", "table must have a non-empty first column");

  bool corrupt = false;
  for (const auto& row : t.cells())
    for (const auto& c : row)
      if (c.is_text() && is_corrupt_text(c.as_text())) corrupt = true;
  if (corrupt) add("content-parseable", "cells must hold parseable numbers or text");

  if (byte_size > kMaxTableBytes) add("max-size-100MB", "file exceeds 100 MB");

  bool body_row = false;
  for (std::size_t r = 1; r < t.rows(); ++r)
    if (!row_empty(t.cells()[r])) body_row = true;
  if (!body_row) add("body-row-nonempty", "need at least one non-empty row beyond the header");

  bool multi_row_header = std::any_of(t.merges().begin(), t.merges().end(),
                                      [](const MergeRegion& m) { return m.row0 == 0; });
  if (t.rows() > 0 && !multi_row_header) {
    std::set<std::string> seen;
    bool ambiguous = false;
    for (const auto& c : t.cells()[0]) {
      auto name = std::string(text::trim(c.to_text()));
      if (name.empty() || !seen.insert(name).second) ambiguous = true;
    }
    if (ambiguous)
      add("header-unambiguous", "single-row header needs unique non-empty names for every column");
  }

  report.passed = report.violations.empty();
  return report;
}

std::string csv_record(const std::vector<std::string>& fields, char sep) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(sep);
    const auto& f = fields[i];
    bool quote = f.find_first_of(std::string("\"\r\n") + sep) != std::string::npos ||
                 (!f.empty() && (f.front() == ' ' || f.back() == ' '));
    if (!quote) {
      out += f;
      continue;
    }
    out.push_back('"');
    for (char c : f) {
      if (c == '"') out.push_back('"');
      out.push_back(c);
    }
    out.push_back('"');
  }
  return out;
}

std::string serialize_csv(const ProcessedTable& t) {
  std::string out = csv_record(t.header);
  out.push_back('\n');
  for (const auto& row : t.body) {
    std::vector<std::string> fields;
    fields.reserve(row.size());
    for (const auto& c : row) fields.push_back(c.to_text());
    out += csv_record(fields);
    out.push_back('\n');
  }
  return out;
}

} // namespace tabflow
