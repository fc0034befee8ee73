// SPDX-License-Identifier: Apache-2.0
#include "tabflow/charttool.hpp"

#include "tabflow/error.hpp"
#include "tabflow/text_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace tabflow::chart {

std::string_view to_string(ChartType t) {
  switch (t) {
  case ChartType::Bar: return "bar";
  case ChartType::Line: return "line";
  case ChartType::Pie: return "pie";
  case ChartType::Scatter: return "scatter";
  }
  return "bar";
}

namespace {

constexpr std::size_t kMaxPoints = 10000;

const std::vector<std::string> kPalette{"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                        "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

bool is_color(const std::string& s) {
  if (s.size() == 4 || s.size() == 7) {
    if (s[0] != '#') return false;
    return std::all_of(s.begin() + 1, s.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); });
  }
  return !s.empty() && s.size() <= 20 &&
         std::all_of(s.begin(), s.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

std::string get_string(const nlohmann::json& obj, const char* key, const std::string& field,
                       std::string fallback = {}) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw SchemaError(field, "expected a string");
  auto s = v.get<std::string>();
  if (s.size() > 500) throw SchemaError(field, "string longer than 500 bytes");
  return s;
}

double to_y(const nlohmann::json& v, const std::string& field) {
  if (v.is_number()) {
    double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(field, "value is not finite");
    return d;
  }
  if (v.is_string())
    if (auto d = coerce_number(v.get<std::string>())) return *d;
  throw SchemaError(field, "expected a number or numeric string");
}

std::string to_x(const nlohmann::json& v, const std::string& field) {
  if (v.is_string()) {
    auto s = v.get<std::string>();
    if (s.size() > 200) throw SchemaError(field, "label longer than 200 bytes");
    return s;
  }
  if (v.is_number()) {
    double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(field, "value is not finite");
    return text::format_number(d);
  }
  throw SchemaError(field, "expected a string or number");
}

Series parse_series(const nlohmann::json& s, std::size_t index) {
  const std::string field = "series[" + std::to_string(index) + "]";
  if (!s.is_object()) throw SchemaError(field, "expected an object");
  Series out;
  out.name = get_string(s, "name", field + ".name", "series " + std::to_string(index + 1));
  if (!s.contains("x") || !s.at("x").is_array()) throw SchemaError(field + ".x", "expected a list");
  if (!s.contains("y") || !s.at("y").is_array()) throw SchemaError(field + ".y", "expected a list");
  const auto& xs = s.at("x");
  const auto& ys = s.at("y");
  if (xs.size() != ys.size())
    throw SchemaError("series", field + " has " + std::to_string(xs.size()) + " x values but " +
                                    std::to_string(ys.size()) + " y values");
  if (xs.empty()) throw SchemaError("series", field + " has no points");
  if (xs.size() > kMaxPoints) throw SchemaError("series", field + " has too many points");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out.x.push_back(to_x(xs[i], field + ".x[" + std::to_string(i) + "]"));
    out.y.push_back(to_y(ys[i], field + ".y[" + std::to_string(i) + "]"));
  }
  return out;
}

int get_dimension(const nlohmann::json& obj, const char* key, int fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw SchemaError(std::string("options.") + key, "expected an integer");
  auto n = v.get<long long>();
  if (n < 100 || n > 4000) throw SchemaError(std::string("options.") + key, "must be within [100, 4000]");
  return static_cast<int>(n);
}

} // namespace

std::optional<double> coerce_number(std::string_view raw) {
  std::string s(text::trim(raw));
  auto strip_suffix = [&](std::string_view suf) {
    if (s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
      s.resize(s.size() - suf.size());
      s = std::string(text::trim(s));
      return true;
    }
    return false;
  };
  for (std::string_view suf : {"\xC2\xB0" "C", "\xC2\xB0" "F", "\xC2\xB0", "%"})
    if (strip_suffix(suf)) break;
  bool negative = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    negative = s[0] == '-';
    s.erase(0, 1);
  }
  for (std::string_view cur : {"$", "\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5"})
    if (s.compare(0, cur.size(), cur) == 0) {
      s.erase(0, cur.size());
      break;
    }
  s = std::string(text::trim(s));
  if (!negative && !s.empty() && s[0] == '-') {
    negative = true;
    s.erase(0, 1);
  }
  std::string digits;
  for (char c : s)
    if (c != ',') digits.push_back(c);
  if (digits.empty() || digits[0] == '-' || digits[0] == '+') return std::nullopt;
  auto v = text::parse_number(digits);
  if (!v) return std::nullopt;
  return negative ? -*v : *v;
}

ChartCall validate_call(const nlohmann::json& input) {
  if (!input.is_object()) throw SchemaError("$", "expected a JSON object");
  const nlohmann::json* raw = &input;
  for (const char* wrapper : {"arguments", "parameters"})
    if (input.contains(wrapper) && input.at(wrapper).is_object()) raw = &input.at(wrapper);

  ChartCall call;
  std::string type;
  if (raw->contains("chart_type"))
    type = get_string(*raw, "chart_type", "chart_type");
  else
    type = get_string(*raw, "type", "chart_type");
  type = text::to_lower(type);
  if (type == "bar") call.chart_type = ChartType::Bar;
  else if (type == "line") call.chart_type = ChartType::Line;
  else if (type == "pie") call.chart_type = ChartType::Pie;
  else if (type == "scatter") call.chart_type = ChartType::Scatter;
  else throw SchemaError("chart_type", "must be one of bar, line, pie, scatter");

  call.title = get_string(*raw, "title", "title");
  call.x_label = get_string(*raw, "x_label", "x_label");
  call.y_label = get_string(*raw, "y_label", "y_label");

  if (raw->contains("series")) {
    const auto& s = raw->at("series");
    if (!s.is_array()) throw SchemaError("series", "expected a list");
    if (s.empty()) throw SchemaError("series", "at least one series is required");
    if (s.size() > 50) throw SchemaError("series", "at most 50 series");
    for (std::size_t i = 0; i < s.size(); ++i) call.series.push_back(parse_series(s[i], i));
  } else if (raw->contains("x") || raw->contains("y")) {
    nlohmann::json single = nlohmann::json::object();
    single["x"] = raw->contains("x") ? raw->at("x") : nlohmann::json();
    single["y"] = raw->contains("y") ? raw->at("y") : nlohmann::json();
    single["name"] = call.y_label.empty() ? "series 1" : call.y_label;
    call.series.push_back(parse_series(single, 0));
  } else {
    throw SchemaError("series", "at least one series is required");
  }
  std::size_t total = 0;
  for (const auto& s : call.series) total += s.x.size();
  if (total > kMaxPoints) throw SchemaError("series", "too many points in total");

  if (call.chart_type == ChartType::Pie && call.series.size() != 1)
    throw SchemaError("series", "pie charts take exactly one series");
  if (call.chart_type == ChartType::Scatter)
    for (std::size_t i = 0; i < call.series.size(); ++i)
      for (const auto& x : call.series[i].x)
        if (!coerce_number(x))
          throw SchemaError("series[" + std::to_string(i) + "].x", "scatter needs numeric x values");

  if (raw->contains("options") && !raw->at("options").is_null()) {
    const auto& opt = raw->at("options");
    if (!opt.is_object()) throw SchemaError("options", "expected an object");
    if (opt.contains("legend") && !opt.at("legend").is_null()) {
      if (!opt.at("legend").is_boolean()) throw SchemaError("options.legend", "expected a boolean");
      call.legend = opt.at("legend").get<bool>();
    }
    if (opt.contains("colors") && !opt.at("colors").is_null()) {
      const auto& colors = opt.at("colors");
      if (!colors.is_array() || colors.size() > 50) throw SchemaError("options.colors", "expected a list");
      for (const auto& c : colors) {
        if (!c.is_string() || !is_color(c.get<std::string>()))
          throw SchemaError("options.colors", "colors must be #rgb, #rrggbb or a lowercase name");
        call.colors.push_back(c.get<std::string>());
      }
    }
    call.width = get_dimension(opt, "width", call.width);
    call.height = get_dimension(opt, "height", call.height);
  }
  return call;
}

std::vector<double> nice_ticks(double lo, double hi, int max_ticks) {
  if (max_ticks < 2) max_ticks = 2;
  if (!(hi > lo)) {
    double pad = lo == 0 ? 1.0 : std::abs(lo) * 0.5;
    lo -= pad;
    hi += pad;
  }
  auto nice = [](double x, bool round) {
    const double e = std::floor(std::log10(x));
    const double f = x / std::pow(10.0, e);
    double nf;
    if (round) nf = f < 1.5 ? 1 : f < 3 ? 2 : f < 7 ? 5 : 10;
    else nf = f <= 1 ? 1 : f <= 2 ? 2 : f <= 5 ? 5 : 10;
    return nf * std::pow(10.0, e);
  };
  double step = nice(nice(hi - lo, false) / (max_ticks - 1), true);
  for (int guard = 0; guard < 64; ++guard) {
    const double first = std::floor(lo / step) * step;
    const double last = std::ceil(hi / step) * step;
    const auto count = static_cast<long long>(std::llround((last - first) / step)) + 1;
    if (count <= max_ticks) {
      std::vector<double> ticks;
      for (long long i = 0; i < count; ++i) {
        double v = first + static_cast<double>(i) * step;
        if (std::abs(v) < step * 1e-9) v = 0;
        ticks.push_back(v);
      }
      return ticks;
    }
    step = nice(step * 1.5, false);
  }
  return {lo, hi};
}

namespace {

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  std::string s(buf);
  if (s == "-0.000") s = "0.000";
  return s;
}

std::string tick_label(double v, double step) {
  int decimals = step >= 1 ? 0 : static_cast<int>(std::ceil(-std::log10(step) - 1e-9));
  decimals = std::clamp(decimals, 0, 10);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf);
  if (s.rfind("-0", 0) == 0 && std::strtod(buf, nullptr) == 0) s.erase(0, 1);
  return s;
}

std::string color_for(const ChartCall& c, std::size_t i) {
  if (!c.colors.empty()) return c.colors[i % c.colors.size()];
  return kPalette[i % kPalette.size()];
}

std::string digest(const ChartCall& c) {
  std::string canon = std::string(to_string(c.chart_type)) + "\n";
  for (const auto& s : c.series) {
    canon += s.name + "\x1f";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      canon += s.x[i] + "\x1e" + text::format_number(s.y[i]) + "\x1d";
    canon += "\n";
  }
  return text::sha256_hex(canon).substr(0, 16);
}

struct Frame {
  double left, right, top, bottom;
};

std::string open_svg(const ChartCall& c) {
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(c.width) +
       "\" height=\"" + std::to_string(c.height) + "\" viewBox=\"0 0 " + std::to_string(c.width) +
       " " + std::to_string(c.height) + "\" data-format=\"CHART/1\" data-chart-type=\"" +
       std::string(to_string(c.chart_type)) + "\">\n";
  s += "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" + std::to_string(c.width) +
       "\" height=\"" + std::to_string(c.height) + "\" fill=\"#ffffff\"/>\n";
  s += "<text class=\"title\" x=\"" + px(c.width / 2.0) +
       "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">" +
       text::xml_escape(c.title) + "</text>\n";
  return s;
}

std::string legend_block(const std::vector<std::pair<std::string, std::string>>& entries, double x,
                         double y) {
  std::string s = "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const double ey = y + static_cast<double>(i) * 20;
    s += "<rect x=\"" + px(x) + "\" y=\"" + px(ey) + "\" width=\"12\" height=\"12\" fill=\"" +
         entries[i].second + "\"/>";
    s += "<text x=\"" + px(x + 18) + "\" y=\"" + px(ey + 10) +
         "\" font-family=\"sans-serif\" font-size=\"12\">" + text::xml_escape(entries[i].first) +
         "</text>\n";
  }
  return s + "</g>\n";
}

std::string render_pie(const ChartCall& c) {
  const auto& s = c.series.front();
  double total = 0;
  for (double v : s.y) {
    if (v < 0) throw Error(ErrorCode::RenderError, "pie values must be non-negative");
    total += v;
  }
  if (!(total > 0)) throw Error(ErrorCode::RenderError, "pie values sum to zero");

  const double legend_w = c.legend ? 160 : 0;
  const double cx = (c.width - legend_w) / 2.0;
  const double cy = (c.height + 40) / 2.0;
  const double r = std::max(10.0, std::min(c.width - legend_w, c.height - 40.0) / 2.0 - 30);
  std::string svg = open_svg(c);
  svg += "<g class=\"plot\">\n";
  double start = 0;
  std::vector<std::pair<std::string, std::string>> legend;
  for (std::size_t i = 0; i < s.y.size(); ++i) {
    const double sweep = 360.0 * s.y[i] / total;
    const std::string color = color_for(c, i);
    legend.emplace_back(s.x[i], color);
    const std::string attrs = " class=\"mark slice\" data-x=\"" + text::xml_escape(s.x[i]) +
                              "\" data-value=\"" + text::format_number(s.y[i]) + "\" fill=\"" +
                              color + "\" stroke=\"#ffffff\"";
    if (sweep <= 0) {
      svg += "<path" + attrs + " d=\"M " + px(cx) + " " + px(cy) + " Z\"/>\n";
      continue;
    }
    if (sweep >= 360.0 - 1e-9) {
      svg += "<circle" + attrs + " cx=\"" + px(cx) + "\" cy=\"" + px(cy) + "\" r=\"" + px(r) + "\"/>\n";
      start += sweep;
      continue;
    }
    // 0 degrees at 12 o'clock, clockwise
    auto point = [&](double deg) {
      const double rad = (deg - 90.0) * std::numbers::pi / 180.0;
      return std::make_pair(cx + r * std::cos(rad), cy + r * std::sin(rad));
    };
    auto [x0, y0] = point(start);
    auto [x1, y1] = point(start + sweep);
    svg += "<path" + attrs + " d=\"M " + px(cx) + " " + px(cy) + " L " + px(x0) + " " + px(y0) +
           " A " + px(r) + " " + px(r) + " 0 " + (sweep > 180.0 ? "1" : "0") + " 1 " + px(x1) + " " +
           px(y1) + " Z\"/>\n";
    start += sweep;
  }
  svg += "</g>\n";
  if (c.legend) svg += legend_block(legend, c.width - legend_w + 10, 60);
  if (!c.x_label.empty())
    svg += "<text class=\"x-label\" x=\"" + px(cx) + "\" y=\"" + px(c.height - 10.0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
           text::xml_escape(c.x_label) + "</text>\n";
  if (!c.y_label.empty())
    svg += "<text class=\"y-label\" x=\"" + px(cx) + "\" y=\"48\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"13\">" +
           text::xml_escape(c.y_label) + "</text>\n";
  return svg + "</svg>\n";
}

std::string render_xy(const ChartCall& c) {
  const bool show_legend = c.legend && c.series.size() > 1;
  const Frame f{70, show_legend ? 170.0 : 30.0, 50, 60};
  const double x0 = f.left, x1 = c.width - f.right;
  const double y0 = f.top, y1 = c.height - f.bottom;

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : c.series)
    for (double v : s.y) lo = std::min(lo, v), hi = std::max(hi, v);
  if (c.chart_type == ChartType::Bar) {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
    if (lo == hi) hi = 1;
  }
  const auto yticks = nice_ticks(lo, hi);
  const double d0 = yticks.front(), d1 = yticks.back();
  const double ystep = yticks.size() > 1 ? yticks[1] - yticks[0] : 1;
  auto ymap = [&](double v) { return y1 - (v - d0) / (d1 - d0) * (y1 - y0); };

  std::string svg = open_svg(c);
  svg += "<g class=\"y-axis\" data-domain-min=\"" + text::format_number(d0) + "\" data-domain-max=\"" +
         text::format_number(d1) + "\">\n";
  for (double t : yticks) {
    const double ty = ymap(t);
    svg += "<line class=\"y-grid\" x1=\"" + px(x0) + "\" x2=\"" + px(x1) + "\" y1=\"" + px(ty) +
           "\" y2=\"" + px(ty) + "\" stroke=\"#dddddd\" data-value=\"" + text::format_number(t) + "\"/>";
    svg += "<text class=\"tick-label\" x=\"" + px(x0 - 6) + "\" y=\"" + px(ty + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
           tick_label(t, ystep) + "</text>\n";
  }
  svg += "</g>\n";

  // x placement: numeric axis for scatter, category bands otherwise
  std::vector<std::string> categories;
  std::function<double(const std::string&)> xmap;
  std::vector<double> xticks;
  double band = 0;
  if (c.chart_type == ChartType::Scatter) {
    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    for (const auto& s : c.series)
      for (const auto& x : s.x) {
        double v = *coerce_number(x);
        xlo = std::min(xlo, v), xhi = std::max(xhi, v);
      }
    xticks = nice_ticks(xlo, xhi);
    const double e0 = xticks.front(), e1 = xticks.back();
    xmap = [=](const std::string& x) { return x0 + (*coerce_number(x) - e0) / (e1 - e0) * (x1 - x0); };
  } else {
    for (const auto& s : c.series)
      for (const auto& x : s.x)
        if (std::find(categories.begin(), categories.end(), x) == categories.end()) categories.push_back(x);
    band = (x1 - x0) / static_cast<double>(categories.size());
    xmap = [&categories, band, x0](const std::string& x) {
      auto it = std::find(categories.begin(), categories.end(), x);
      return x0 + band * (static_cast<double>(it - categories.begin()) + 0.5);
    };
  }

  svg += "<g class=\"x-axis\">\n";
  svg += "<line class=\"axis-line\" x1=\"" + px(x0) + "\" x2=\"" + px(x1) + "\" y1=\"" + px(y1) +
         "\" y2=\"" + px(y1) + "\" stroke=\"#333333\"/>\n";
  if (c.chart_type == ChartType::Scatter) {
    const double xstep = xticks.size() > 1 ? xticks[1] - xticks[0] : 1;
    for (double t : xticks) {
      const double tx = xmap(text::format_number(t));
      svg += "<text class=\"tick-label\" x=\"" + px(tx) + "\" y=\"" + px(y1 + 16) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
             tick_label(t, xstep) + "</text>\n";
    }
  } else {
    for (const auto& cat : categories)
      svg += "<text class=\"tick-label\" x=\"" + px(xmap(cat)) + "\" y=\"" + px(y1 + 16) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
             text::xml_escape(cat) + "</text>\n";
  }
  svg += "</g>\n";
  svg += "<line class=\"axis-line\" x1=\"" + px(x0) + "\" x2=\"" + px(x0) + "\" y1=\"" + px(y0) +
         "\" y2=\"" + px(y1) + "\" stroke=\"#333333\"/>\n";

  svg += "<g class=\"plot\">\n";
  const std::size_t ns = c.series.size();
  for (std::size_t si = 0; si < ns; ++si) {
    const auto& s = c.series[si];
    const std::string color = color_for(c, si);
    const std::string series_attr = " data-series=\"" + text::xml_escape(s.name) + "\"";
    if (c.chart_type == ChartType::Bar) {
      const double group_w = band * 0.8;
      const double bar_w = group_w / static_cast<double>(ns);
      const double base = ymap(0);
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double left = xmap(s.x[i]) - group_w / 2 + bar_w * static_cast<double>(si);
        const double top = ymap(s.y[i]);
        svg += "<rect class=\"mark bar\"" + series_attr + " data-x=\"" + text::xml_escape(s.x[i]) +
               "\" x=\"" + px(left) + "\" y=\"" + px(std::min(top, base)) + "\" width=\"" +
               px(bar_w) + "\" height=\"" + px(std::abs(base - top)) + "\" fill=\"" + color + "\"/>\n";
      }
    } else {
      if (c.chart_type == ChartType::Line) {
        svg += "<polyline class=\"series-line\"" + series_attr + " fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
          svg += (i ? " " : "") + px(xmap(s.x[i])) + "," + px(ymap(s.y[i]));
        svg += "\"/>\n";
      }
      for (std::size_t i = 0; i < s.x.size(); ++i)
        svg += "<circle class=\"mark point\"" + series_attr + " data-x=\"" + text::xml_escape(s.x[i]) +
               "\" cx=\"" + px(xmap(s.x[i])) + "\" cy=\"" + px(ymap(s.y[i])) + "\" r=\"4\" fill=\"" +
               color + "\"/>\n";
    }
  }
  svg += "</g>\n";

  svg += "<text class=\"x-label\" x=\"" + px((x0 + x1) / 2) + "\" y=\"" + px(c.height - 15.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         text::xml_escape(c.x_label) + "</text>\n";
  svg += "<text class=\"y-label\" x=\"18\" y=\"" + px((y0 + y1) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 " +
         px((y0 + y1) / 2) + ")\">" + text::xml_escape(c.y_label) + "</text>\n";
  if (show_legend) {
    std::vector<std::pair<std::string, std::string>> entries;
    for (std::size_t si = 0; si < ns; ++si) entries.emplace_back(c.series[si].name, color_for(c, si));
    svg += legend_block(entries, x1 + 20, y0);
  }
  return svg + "</svg>\n";
}

} // namespace

ChartAsset render(const ChartCall& call) {
  if (call.series.empty()) throw Error(ErrorCode::RenderError, "no series to draw");
  ChartAsset asset;
  asset.width = call.width;
  asset.height = call.height;
  asset.data_digest = digest(call);
  asset.svg = call.chart_type == ChartType::Pie ? render_pie(call) : render_xy(call);
  return asset;
}

nlohmann::json call_schema() {
  return nlohmann::json::parse(R"({
  "$id": "CHART/1",
  "type": "object",
  "required": ["tool", "chart_type", "series"],
  "properties": {
    "tool": {"const": "chart_tool"},
    "chart_type": {"enum": ["bar", "line", "pie", "scatter"]},
    "title": {"type": "string"},
    "x_label": {"type": "string"},
    "y_label": {"type": "string"},
    "series": {
      "type": "array", "minItems": 1,
      "items": {
        "type": "object", "required": ["x", "y"],
        "properties": {
          "name": {"type": "string"},
          "x": {"type": "array", "minItems": 1, "items": {"type": ["string", "number"]}},
          "y": {"type": "array", "minItems": 1, "items": {"type": ["number", "string"]}}
        }
      }
    },
    "options": {
      "type": "object",
      "properties": {
        "legend": {"type": "boolean", "default": true},
        "colors": {"type": "array", "items": {"type": "string"}},
        "width": {"type": "integer", "default": 800},
        "height": {"type": "integer", "default": 500}
      }
    }
  }
})");
}

} // namespace tabflow::chart
