// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tabflow::chart {

enum class ChartType { Bar, Line, Pie, Scatter };

std::string_view to_string(ChartType t);

struct Series {
  std::string name;
  /// Category labels, or numeric text for scatter.
  std::vector<std::string> x;
  std::vector<double> y;
};

/// Validated parameters of a "CHART/1" tool call.
struct ChartCall {
  ChartType chart_type = ChartType::Bar;
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<std::string> colors;
  bool legend = true;
  int width = 800;
  int height = 500;
};

struct ChartAsset {
  std::string svg;
  int width = 0;
  int height = 0;
  std::string data_digest;
};

/// Schema check with defaults filled. Throws SchemaError{field, reason};
/// never anything else, whatever the input.
ChartCall validate_call(const nlohmann::json& raw);

/// Deterministic SVG. Throws Error(RenderError) for degenerate pies.
ChartAsset render(const ChartCall& call);

/// Numeric value from text such as "12", "$1,200", "45%", "-3.5 °C".
std::optional<double> coerce_number(std::string_view s);

/// At most `max_ticks` "nice" tick values covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int max_ticks = 8);

/// JSON schema published for the tool ("CHART/1").
nlohmann::json call_schema();

} // namespace tabflow::chart
