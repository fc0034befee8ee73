// SPDX-License-Identifier: Apache-2.0
#include "tabflow/preprocess.hpp"

#include "tabflow/error.hpp"
#include "tabflow/text_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <set>

namespace tabflow {

PreprocessConfig PreprocessConfig::from_json(std::string_view json_text) {
  PreprocessConfig cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("preprocess config: ") + e.what());
  }
  try {
    cfg.max_header_depth = j.value("max_header_depth", cfg.max_header_depth);
    cfg.annotation_prefixes = j.value("annotation_prefixes", cfg.annotation_prefixes);
    cfg.currency_symbols = j.value("currency_symbols", cfg.currency_symbols);
    cfg.percent_symbols = j.value("percent_symbols", cfg.percent_symbols);
    cfg.max_missing_fraction = j.value("max_missing_fraction", cfg.max_missing_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("preprocess config: ") + e.what());
  }
  if (cfg.max_header_depth < 1 || cfg.max_missing_fraction <= 0 || cfg.max_missing_fraction > 1)
    throw Error(ErrorCode::InvalidArgument, "preprocess config: thresholds out of range");
  return cfg;
}

namespace {

struct AdornedNumber {
  double value = 0;
  std::string unit; // empty when only separators were present
  bool malformed = false;
};

// Digits with optional comma thousands groups and optional fraction.
std::optional<std::pair<double, bool>> parse_grouped(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::string digits;
  bool grouped = false;
  std::size_t i = 0;
  std::size_t lead = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') digits.push_back(s[i++]), ++lead;
  if (lead == 0 && !(i < s.size() && s[i] == '.')) return std::nullopt;
  while (i < s.size() && s[i] == ',') {
    if (lead == 0 || (!grouped && lead > 3)) return std::nullopt;
    grouped = true;
    ++i;
    std::size_t n = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') digits.push_back(s[i++]), ++n;
    if (n != 3) return std::nullopt;
  }
  if (i < s.size() && s[i] == '.') {
    digits.push_back(s[i++]);
    std::size_t n = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') digits.push_back(s[i++]), ++n;
    if (n == 0) return std::nullopt;
  }
  if (i != s.size()) return std::nullopt;
  auto v = text::parse_number(digits);
  if (!v) return std::nullopt;
  return std::make_pair(*v, grouped);
}

std::optional<AdornedNumber> parse_adorned(std::string_view raw, const PreprocessConfig& cfg) {
  auto s = text::trim(raw);
  bool negative = false;
  std::string unit;
  auto take_sign = [&] {
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
      negative = s.front() == '-';
      s.remove_prefix(1);
      s = text::trim(s);
      return true;
    }
    return false;
  };
  auto take_prefix_unit = [&] {
    for (const auto& sym : cfg.currency_symbols)
      if (!sym.empty() && s.substr(0, sym.size()) == sym) {
        unit = sym;
        s.remove_prefix(sym.size());
        s = text::trim(s);
        return true;
      }
    return false;
  };
  bool signed_first = take_sign();
  take_prefix_unit();
  if (!signed_first) take_sign();
  if (unit.empty()) {
    for (const auto& sym : cfg.currency_symbols)
      if (!sym.empty() && s.size() > sym.size() && s.substr(s.size() - sym.size()) == sym) {
        unit = sym;
        s.remove_suffix(sym.size());
        s = text::trim(s);
        break;
      }
  }
  if (unit.empty()) {
    for (const auto& sym : cfg.percent_symbols)
      if (!sym.empty() && s.size() > sym.size() && s.substr(s.size() - sym.size()) == sym) {
        unit = sym;
        s.remove_suffix(sym.size());
        s = text::trim(s);
        break;
      }
  }
  auto parsed = parse_grouped(s);
  if (!parsed) return std::nullopt;
  AdornedNumber out;
  out.value = negative ? -parsed->first : parsed->first;
  out.unit = unit;
  out.malformed = !unit.empty() || parsed->second;
  return out;
}

bool is_numeric_like(const CellValue& c) {
  if (c.is_number() || c.is_date()) return true;
  if (!c.is_text()) return false;
  auto t = text::trim(c.as_text());
  if (text::parse_number(t) || text::is_iso_date(t)) return true;
  static const PreprocessConfig defaults;
  return parse_adorned(t, defaults).has_value();
}

bool row_all_numeric(const Row& row) {
  bool any = false;
  for (const auto& c : row) {
    if (c.is_null()) continue;
    any = true;
    if (!is_numeric_like(c)) return false;
  }
  return any;
}

// Header depth by rule, ignoring whether a body remains.
HeaderClass detect_header(const RawTable& t, const PreprocessConfig& cfg) {
  HeaderClass hc;
  if (t.rows() == 0) return hc;
  if (row_all_numeric(t.cells()[0])) {
    hc.header_rows = 0;
    hc.synthetic = true;
    return hc;
  }
  std::size_t depth = 1;
  while (depth < cfg.max_header_depth && depth < t.rows()) {
    const std::size_t r = depth;
    bool vertical = false;
    bool under_span = false;
    for (const auto& m : t.merges()) {
      if (m.row0 <= r - 1 && m.row1 >= r) vertical = true;
      if (m.row1 == r - 1 && m.col1 > m.col0) under_span = true;
    }
    if (!vertical && !under_span) break;
    ++depth;
  }
  hc.header_rows = depth;
  for (const auto& m : t.merges())
    if (m.row0 < depth) hc.merged = true;
  if (depth > 1 || hc.merged) hc.kind = HeaderClass::Kind::Complex;
  return hc;
}

} // namespace

HeaderClass classify_header(const RawTable& t, const PreprocessConfig& cfg) {
  if (cfg.header_hook)
    if (auto override_class = cfg.header_hook(t)) return *override_class;
  return detect_header(t, cfg);
}

SplitTable split_header_body(const RawTable& t, const PreprocessConfig& cfg) {
  auto hc = classify_header(t, cfg);
  const std::size_t depth = hc.synthetic ? 0 : hc.header_rows;
  if (depth >= t.rows())
    throw Error(ErrorCode::NoBodyRows, "header block consumes every row");

  // Merged cells are split by copying the anchor value across the region.
  Grid cells = t.cells();
  for (const auto& m : t.merges()) {
    const CellValue anchor = cells[m.row0][m.col0];
    for (std::size_t r = m.row0; r <= m.row1; ++r)
      for (std::size_t c = m.col0; c <= m.col1; ++c) cells[r][c] = anchor;
  }

  SplitTable out;
  out.split_row = depth;
  out.synthetic_header = hc.synthetic;
  out.header_block.assign(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(depth));
  out.body_block.assign(cells.begin() + static_cast<std::ptrdiff_t>(depth), cells.end());
  for (const auto& m : t.merges()) {
    if (m.row0 >= depth) continue;
    MergeRegion clipped = m;
    clipped.row1 = std::min(m.row1, depth - 1);
    out.header_merges.push_back(clipped);
  }
  return out;
}

std::vector<std::string> standardize_header(const Grid& header,
                                            const std::vector<MergeRegion>& merges) {
  Grid h = header;
  std::size_t cols = 0;
  for (const auto& row : h) cols = std::max(cols, row.size());
  for (auto& row : h) row.resize(cols);
  for (const auto& m : merges) {
    if (m.row1 >= h.size() || m.col1 >= cols) continue;
    const CellValue anchor = h[m.row0][m.col0];
    for (std::size_t r = m.row0; r <= m.row1; ++r)
      for (std::size_t c = m.col0; c <= m.col1; ++c) h[r][c] = anchor;
  }

  std::vector<std::string> names;
  names.reserve(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<std::string> parts;
    for (const auto& row : h) {
      auto v = std::string(text::trim(row[c].to_text()));
      if (v.empty() || std::find(parts.begin(), parts.end(), v) != parts.end()) continue;
      parts.push_back(std::move(v));
    }
    auto name = text::join(parts, "_");
    if (name.empty()) name = "col" + std::to_string(c);
    names.push_back(std::move(name));
  }

  std::set<std::string> used(names.begin(), names.end());
  std::map<std::string, int> seen;
  for (auto& name : names) {
    int& count = seen[name];
    ++count;
    if (count == 1) continue;
    int suffix = count;
    std::string candidate;
    do {
      candidate = name + "_" + std::to_string(suffix++);
    } while (used.count(candidate));
    used.insert(candidate);
    name = std::move(candidate);
  }
  return names;
}

namespace {

char32_t fold_script(char32_t cp) {
  switch (cp) {
  case 0x2070: return '0';
  case 0x00B9: return '1';
  case 0x00B2: return '2';
  case 0x00B3: return '3';
  case 0x2074: return '4';
  case 0x2075: return '5';
  case 0x2076: return '6';
  case 0x2077: return '7';
  case 0x2078: return '8';
  case 0x2079: return '9';
  case 0x207A: return '+';
  case 0x207B: return '-';
  case 0x207C: return '=';
  case 0x207D: return '(';
  case 0x207E: return ')';
  case 0x2071: return 'i';
  case 0x207F: return 'n';
  case 0x208A: return '+';
  case 0x208B: return '-';
  case 0x208C: return '=';
  case 0x208D: return '(';
  case 0x208E: return ')';
  case 0x2090: return 'a';
  case 0x2091: return 'e';
  case 0x2092: return 'o';
  case 0x2093: return 'x';
  case 0x2095: return 'h';
  case 0x2096: return 'k';
  case 0x2097: return 'l';
  case 0x2098: return 'm';
  case 0x2099: return 'n';
  case 0x209A: return 'p';
  case 0x209B: return 's';
  case 0x209C: return 't';
  default: break;
  }
  if (cp >= 0x2080 && cp <= 0x2089) return U'0' + (cp - 0x2080);
  return cp;
}

std::string fold_scripts(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) text::append_utf8(out, fold_script(text::next_codepoint(s, pos)));
  return out;
}

bool is_url(std::string_view s) {
  return text::starts_with_icase(s, "http://") || text::starts_with_icase(s, "https://") ||
         text::starts_with_icase(s, "www.");
}

// Trailing path segment of a URL; host when the path is empty.
std::string url_display(std::string_view url) {
  auto cut = url.find_first_of("?#");
  if (cut != std::string_view::npos) url = url.substr(0, cut);
  auto scheme = url.find("://");
  if (scheme != std::string_view::npos) url.remove_prefix(scheme + 3);
  while (!url.empty() && url.back() == '/') url.remove_suffix(1);
  auto slash = url.rfind('/');
  if (slash == std::string_view::npos) return std::string(url);
  return std::string(url.substr(slash + 1));
}

std::string strip_quotes(std::string_view s) {
  s = text::trim(s);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

// Markdown links and HTML anchors inside a cell reduce to their label.
std::string strip_links(std::string s) {
  for (std::size_t open = s.find('['); open != std::string::npos; open = s.find('[', open + 1)) {
    auto close = s.find("](", open);
    if (close == std::string::npos) break;
    auto end = s.find(')', close + 2);
    if (end == std::string::npos) break;
    if (s.find('[', open + 1) < close) continue;
    s = s.substr(0, open) + s.substr(open + 1, close - open - 1) + s.substr(end + 1);
  }
  for (std::size_t a = text::to_lower(s).find("<a "); a != std::string::npos;
       a = text::to_lower(s).find("<a ")) {
    auto gt = s.find('>', a);
    auto lower = text::to_lower(s);
    auto end = lower.find("</a>", gt == std::string::npos ? a : gt);
    if (gt == std::string::npos || end == std::string::npos) break;
    s = s.substr(0, a) + s.substr(gt + 1, end - gt - 1) + s.substr(end + 4);
  }
  return s;
}

std::string clean_text(const std::string& raw) {
  std::string s = raw;
  auto t = text::trim(s);
  if (!t.empty() && t.front() == '=' && t.size() > 1) {
    std::string formula(t.substr(1));
    if (text::starts_with_icase(formula, "HYPERLINK(") && formula.back() == ')') {
      auto args = formula.substr(10, formula.size() - 11);
      auto comma = args.rfind(',');
      s = comma == std::string::npos ? url_display(strip_quotes(args))
                                     : strip_quotes(args.substr(comma + 1));
    } else {
      s = formula;
    }
  }
  auto trimmed = std::string(text::trim(s));
  if (is_url(trimmed) && trimmed.find(' ') == std::string::npos) s = url_display(trimmed);
  s = strip_links(std::move(s));
  return fold_scripts(s);
}

} // namespace

Grid clean_body(const Grid& body, const PreprocessConfig& cfg) {
  Grid out;
  out.reserve(body.size());
  for (const auto& row : body) {
    bool only_first = !row.empty() && !row[0].is_null() &&
                      std::all_of(row.begin() + 1, row.end(),
                                  [](const CellValue& c) { return c.is_null(); });
    if (only_first && row[0].is_text()) {
      auto first = text::trim(row[0].as_text());
      bool annotation = std::any_of(
          cfg.annotation_prefixes.begin(), cfg.annotation_prefixes.end(),
          [&](const std::string& p) { return !p.empty() && text::starts_with_icase(first, p); });
      if (annotation) continue;
    }
    Row cleaned;
    cleaned.reserve(row.size());
    for (const auto& c : row) {
      if (!c.is_text()) {
        cleaned.push_back(c);
        continue;
      }
      auto s = clean_text(c.as_text());
      cleaned.push_back(text::trim(s).empty() ? CellValue::null() : CellValue::text(std::move(s)));
    }
    out.push_back(std::move(cleaned));
  }
  return out;
}

ResolvedBody resolve_missing(const Grid& body, const PreprocessConfig& cfg) {
  std::size_t cells = 0, nulls = 0, cols = 0;
  for (const auto& row : body) {
    cols = std::max(cols, row.size());
    for (const auto& c : row) {
      ++cells;
      if (c.is_null()) ++nulls;
    }
  }
  if (cells == 0 || static_cast<double>(nulls) / static_cast<double>(cells) > cfg.max_missing_fraction)
    throw Error(ErrorCode::TooSparse,
                "missing fraction " + std::to_string(cells ? static_cast<double>(nulls) / cells : 1.0) +
                    " exceeds " + text::format_number(cfg.max_missing_fraction));

  ResolvedBody out;
  out.body = body;
  out.units.assign(cols, std::nullopt);
  for (std::size_t c = 0; c < cols; ++c) {
    std::set<std::string> units;
    for (const auto& row : body) {
      if (c >= row.size() || !row[c].is_text()) continue;
      if (auto a = parse_adorned(row[c].as_text(), cfg); a && a->malformed && !a->unit.empty())
        units.insert(a->unit);
    }
    const bool unit_conflict = units.size() > 1;
    for (auto& row : out.body) {
      if (c >= row.size() || !row[c].is_text()) continue;
      auto a = parse_adorned(row[c].as_text(), cfg);
      if (!a || !a->malformed) continue;
      if (!a->unit.empty() && unit_conflict) continue;
      row[c] = CellValue::number(a->value);
    }
    if (units.size() == 1) out.units[c] = *units.begin();
  }
  return out;
}

ProcessedTable preprocess(const RawTable& t, const PreprocessConfig& cfg) {
  auto split = split_header_body(t, cfg);

  ProcessedTable out;
  out.source_name = t.source_name();
  out.provenance.push_back("split_header_body");
  if (split.synthetic_header) {
    for (std::size_t c = 0; c < t.cols(); ++c) out.header.push_back("col" + std::to_string(c));
  } else {
    out.header = standardize_header(split.header_block, split.header_merges);
  }
  out.provenance.push_back("standardize_header");

  auto body = clean_body(split.body_block, cfg);
  out.provenance.push_back("clean_body");
  if (body.empty()) throw Error(ErrorCode::NoBodyRows, "no body rows remain after cleaning");

  auto resolved = resolve_missing(body, cfg);
  out.provenance.push_back("resolve_missing");
  out.body = std::move(resolved.body);
  out.units = std::move(resolved.units);
  out.units.resize(out.header.size());
  for (std::size_t c = 0; c < out.units.size(); ++c)
    if (out.units[c]) out.provenance.push_back("unit:" + out.header[c] + "=" + *out.units[c]);
  return out;
}

bool same_content(const ProcessedTable& a, const ProcessedTable& b) {
  if (a.header != b.header || a.body.size() != b.body.size()) return false;
  for (std::size_t r = 0; r < a.body.size(); ++r) {
    if (a.body[r].size() != b.body[r].size()) return false;
    for (std::size_t c = 0; c < a.body[r].size(); ++c)
      if (a.body[r][c].to_text() != b.body[r][c].to_text()) return false;
  }
  return true;
}

} // namespace tabflow
