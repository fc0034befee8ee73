// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tabflow::text {

bool is_valid_utf8(std::string_view s);

/// Decodes one code point starting at `pos` and advances it. Invalid bytes
/// decode as U+FFFD and advance by one.
char32_t next_codepoint(std::string_view s, std::size_t& pos);
void append_utf8(std::string& out, char32_t cp);

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Strict decimal parse: optional sign, digits, optional fraction and
/// exponent, nothing else. Rejects inf/nan.
std::optional<double> parse_number(std::string_view s);

/// Shortest text that round-trips the double ("1214", "12.5", "-0.1").
std::string format_number(double v);

/// Fixed 4-decimal rendering with trailing zeros trimmed; the form used for
/// synthesized answers so generated programs can print the same text.
std::string format_answer_number(double v);

/// YYYY-MM-DD with an optional "T..." or " hh:mm[:ss]" time suffix.
bool is_iso_date(std::string_view s);

std::string sha256_hex(std::string_view data);

std::string xml_escape(std::string_view s);

} // namespace tabflow::text
