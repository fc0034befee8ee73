// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tabflow/table.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tabflow {

enum class ColumnType { Numerical, Categorical, Textual, Date, Boolean };

std::string_view to_string(ColumnType t);

enum class SampleStrategy { Head, HeadTailRandom };

struct SensePolicy {
  std::size_t sample_cap = 5;
  SampleStrategy sample_strategy = SampleStrategy::HeadTailRandom;
  std::size_t categorical_max_distinct = 20;
  double parse_threshold = 0.90;
  std::uint64_t seed = 0;
  /// Adds min/max/mean for numerical columns to the rendering.
  bool include_stats = false;
};

struct ColumnStats {
  double min = 0, max = 0, mean = 0;
};

struct TableMetadata {
  std::string name;
  std::vector<std::string> headers;
  std::vector<ColumnType> types;
  std::vector<std::size_t> missing;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Row> sample;
  /// Body row indices of `sample`, ascending.
  std::vector<std::size_t> sample_rows;
  std::vector<std::optional<std::string>> units;
  std::vector<std::optional<ColumnStats>> stats;
};

/// Value as a number if the cell is numeric or numeric text.
std::optional<double> numeric_value(const CellValue& c);

ColumnType infer_column_type(const std::vector<CellValue>& values, const SensePolicy& p = {});

TableMetadata sense(const ProcessedTable& t, const SensePolicy& p = {});

/// Line-oriented "SENSE/1" text. Byte-identical for equal inputs.
std::string render_metadata(const TableMetadata& o);

nlohmann::json metadata_to_json(const TableMetadata& o);

} // namespace tabflow
