// SPDX-License-Identifier: Apache-2.0
#include "tabflow/sensing.hpp"

#include "tabflow/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <random>
#include <set>

namespace tabflow {

std::string_view to_string(ColumnType t) {
  switch (t) {
  case ColumnType::Numerical: return "numerical";
  case ColumnType::Categorical: return "categorical";
  case ColumnType::Textual: return "textual";
  case ColumnType::Date: return "date";
  case ColumnType::Boolean: return "boolean";
  }
  return "textual";
}

std::optional<double> numeric_value(const CellValue& c) {
  if (c.is_number()) return c.as_number();
  if (c.is_text()) return text::parse_number(text::trim(c.as_text()));
  return std::nullopt;
}

namespace {

bool is_date_value(const CellValue& c) {
  return c.is_date() || (c.is_text() && text::is_iso_date(text::trim(c.as_text())));
}

bool is_bool_value(const CellValue& c) {
  if (c.is_bool()) return true;
  if (!c.is_text()) return false;
  auto v = text::to_lower(text::trim(c.as_text()));
  return v == "true" || v == "false" || v == "yes" || v == "no";
}

} // namespace

ColumnType infer_column_type(const std::vector<CellValue>& values, const SensePolicy& p) {
  std::size_t n = 0, numeric = 0, dates = 0, bools = 0;
  std::set<std::string> distinct;
  for (const auto& v : values) {
    if (v.is_null()) continue;
    ++n;
    if (numeric_value(v)) ++numeric;
    if (is_date_value(v)) ++dates;
    if (is_bool_value(v)) ++bools;
    distinct.insert(v.to_text());
  }
  if (n == 0) return ColumnType::Textual;
  const double threshold = p.parse_threshold * static_cast<double>(n);
  if (static_cast<double>(numeric) >= threshold) return ColumnType::Numerical;
  if (static_cast<double>(dates) >= threshold) return ColumnType::Date;
  if (bools == n) return ColumnType::Boolean;
  if (distinct.size() <= p.categorical_max_distinct) return ColumnType::Categorical;
  return ColumnType::Textual;
}

namespace {

std::vector<std::size_t> choose_sample(std::size_t rows, const SensePolicy& p) {
  const std::size_t cap = std::max<std::size_t>(p.sample_cap, 1);
  std::vector<std::size_t> idx;
  if (rows <= cap) {
    for (std::size_t i = 0; i < rows; ++i) idx.push_back(i);
    return idx;
  }
  if (p.sample_strategy == SampleStrategy::Head) {
    for (std::size_t i = 0; i < cap; ++i) idx.push_back(i);
    return idx;
  }
  const std::size_t head = std::min<std::size_t>(2, cap);
  const std::size_t tail = std::min<std::size_t>(2, cap - head);
  for (std::size_t i = 0; i < head; ++i) idx.push_back(i);
  for (std::size_t i = 0; i < tail; ++i) idx.push_back(rows - tail + i);
  // Floyd's algorithm over the middle range; engine output is portable,
  // std distributions are not, so draws use the raw engine.
  std::mt19937_64 rng(p.seed);
  const std::size_t lo = head, hi = rows - tail; // [lo, hi)
  const std::size_t want = std::min(cap - head - tail, hi - lo);
  std::set<std::size_t> picked;
  for (std::size_t j = hi - lo - want; j < hi - lo; ++j) {
    std::size_t t = static_cast<std::size_t>(rng() % (j + 1));
    if (!picked.insert(lo + t).second) picked.insert(lo + j);
  }
  idx.insert(idx.end(), picked.begin(), picked.end());
  std::sort(idx.begin(), idx.end());
  return idx;
}

} // namespace

TableMetadata sense(const ProcessedTable& t, const SensePolicy& p) {
  TableMetadata o;
  o.name = t.source_name;
  o.headers = t.header;
  o.rows = t.body.size();
  o.cols = t.header.size();
  o.missing.assign(o.cols, 0);
  o.units = t.units;
  o.units.resize(o.cols);
  o.stats.assign(o.cols, std::nullopt);

  for (std::size_t c = 0; c < o.cols; ++c) {
    std::vector<CellValue> column;
    column.reserve(o.rows);
    for (const auto& row : t.body) {
      const CellValue& v = c < row.size() ? row[c] : CellValue();
      if (v.is_null()) ++o.missing[c];
      column.push_back(v);
    }
    auto type = infer_column_type(column, p);
    o.types.push_back(type);
    if (p.include_stats && type == ColumnType::Numerical) {
      ColumnStats s;
      std::size_t n = 0;
      double sum = 0;
      for (const auto& v : column)
        if (auto x = numeric_value(v)) {
          s.min = n == 0 ? *x : std::min(s.min, *x);
          s.max = n == 0 ? *x : std::max(s.max, *x);
          sum += *x;
          ++n;
        }
      if (n) {
        s.mean = sum / static_cast<double>(n);
        o.stats[c] = s;
      }
    }
  }

  o.sample_rows = choose_sample(o.rows, p);
  for (auto r : o.sample_rows) o.sample.push_back(t.body[r]);
  return o;
}

std::string render_metadata(const TableMetadata& o) {
  std::string out = "SENSE/1\n";
  out += "table: " + (o.name.empty() ? std::string("table") : o.name) + "\n";
  out += "dims: rows=" + std::to_string(o.rows) + " cols=" + std::to_string(o.cols) + "\n";
  out += "columns:\n";
  for (std::size_t c = 0; c < o.cols; ++c) {
    out += "- " + o.headers[c] + " (" + std::string(to_string(o.types[c])) +
           ", missing=" + std::to_string(o.missing[c]);
    if (c < o.units.size() && o.units[c]) out += ", unit=" + *o.units[c];
    if (c < o.stats.size() && o.stats[c])
      out += ", min=" + text::format_number(o.stats[c]->min) +
             ", max=" + text::format_number(o.stats[c]->max) +
             ", mean=" + text::format_number(o.stats[c]->mean);
    out += ")\n";
  }
  out += "sample: " + std::to_string(o.sample.size()) + " of " + std::to_string(o.rows) + " rows\n";
  out += "```csv\n";
  out += csv_record(o.headers) + "\n";
  for (const auto& row : o.sample) {
    std::vector<std::string> fields;
    for (const auto& c : row) fields.push_back(c.to_text());
    out += csv_record(fields) + "\n";
  }
  out += "```\n";
  return out;
}

nlohmann::json metadata_to_json(const TableMetadata& o) {
  nlohmann::json j;
  j["format"] = "SENSE/1";
  j["name"] = o.name;
  j["rows"] = o.rows;
  j["cols"] = o.cols;
  j["headers"] = o.headers;
  auto& types = j["types"] = nlohmann::json::array();
  for (auto t : o.types) types.push_back(std::string(to_string(t)));
  j["missing"] = o.missing;
  auto& units = j["units"] = nlohmann::json::array();
  for (const auto& u : o.units) units.push_back(u ? nlohmann::json(*u) : nlohmann::json());
  j["sample_rows"] = o.sample_rows;
  auto& sample = j["sample"] = nlohmann::json::array();
  for (const auto& row : o.sample) {
    auto r = nlohmann::json::array();
    for (const auto& c : row) r.push_back(c.is_null() ? nlohmann::json() : nlohmann::json(c.to_text()));
    sample.push_back(std::move(r));
  }
  return j;
}

} // namespace tabflow
