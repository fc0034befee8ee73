// SPDX-License-Identifier: Apache-2.0
// Shared plumbing for the unit and acceptance tests.
#pragma once

#include "oracles.hpp"

#include "tabflow/orchestrator.hpp"
#include "tabflow/preprocess.hpp"
#include "tabflow/sensing.hpp"
#include "tabflow/table.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& rel) { return fs::path(TABFLOW_TEST_FIXTURES) / rel; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("tabflow-test-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
  fs::path path_;
};

/// Writes the processed table as CSV and returns the handle a session uses.
inline tabflow::TableHandle stage(const tabflow::ProcessedTable& t, const fs::path& csv_path,
                                  const std::string& name = "table") {
  oracle::write_file(csv_path, tabflow::serialize_csv(t));
  auto meta = tabflow::sense(t);
  meta.name = name;
  return {meta, csv_path.string()};
}

inline tabflow::ProcessedTable load_processed(const fs::path& raw, tabflow::TableFormat f = tabflow::TableFormat::CSV) {
  auto t = tabflow::parse_table(oracle::read_file(raw), f);
  t.set_source_name(raw.filename().string());
  return tabflow::preprocess(t);
}

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Runs a shell command and captures its combined output.
inline CommandResult run_command(const std::string& cmd) {
  CommandResult r;
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int status = ::pclose(p);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

inline std::string cli() { return quote(TABFLOW_CLI_PATH); }

/// Random processed table mixing numbers, text, booleans, dates and nulls.
inline tabflow::ProcessedTable random_table(std::mt19937_64& rng) {
  using tabflow::CellValue;
  std::uniform_int_distribution<int> rows_d(0, 40), cols_d(1, 8), kind_d(0, 5), pct(0, 99);
  tabflow::ProcessedTable t;
  const int cols = cols_d(rng), rows = rows_d(rng);
  std::vector<int> kind(static_cast<std::size_t>(cols));
  std::vector<int> null_rate(static_cast<std::size_t>(cols));
  for (int c = 0; c < cols; ++c) {
    t.header.push_back("c" + std::to_string(c));
    kind[static_cast<std::size_t>(c)] = kind_d(rng);
    null_rate[static_cast<std::size_t>(c)] = pct(rng) % 60;
  }
  static const std::vector<std::string> words{"red", "green", "blue", "north", "south", "alpha", "beta"};
  for (int r = 0; r < rows; ++r) {
    tabflow::Row row;
    for (int c = 0; c < cols; ++c) {
      const auto k = kind[static_cast<std::size_t>(c)];
      if (pct(rng) < null_rate[static_cast<std::size_t>(c)]) {
        row.push_back(CellValue::null());
        continue;
      }
      switch (pct(rng) < 90 ? k : kind_d(rng)) {
        case 0: row.push_back(CellValue::number(static_cast<double>(pct(rng)) / 4.0)); break;
        case 1: row.push_back(CellValue::text(words[static_cast<std::size_t>(pct(rng)) % words.size()])); break;
        case 2: row.push_back(CellValue::text("free text " + std::to_string(pct(rng) * 1000 + r))); break;
        case 3: row.push_back(CellValue::boolean(pct(rng) % 2 == 0)); break;
        case 4: row.push_back(CellValue::date("2024-01-" + std::to_string(10 + pct(rng) % 18))); break;
        default: row.push_back(CellValue::text(std::to_string(pct(rng)))); break;
      }
    }
    t.body.push_back(std::move(row));
  }
  t.units.assign(static_cast<std::size_t>(cols), std::nullopt);
  return t;
}

/// Table suited to every rule sub-task: a key (unique unless `unique_key` is
/// false), a category, three numeric columns and one with gaps.
inline tabflow::ProcessedTable rule_table(std::mt19937_64& rng, bool unique_key) {
  using tabflow::CellValue;
  std::uniform_int_distribution<int> rows_d(8, 30), cents(0, 99999), cat_d(0, 3), pct(0, 99);
  static const std::vector<std::string> regions{"North", "South", "East", "West"};
  tabflow::ProcessedTable t;
  t.header = {"Item", "Region", "Sales", "Cost", "Units", "Rating"};
  const int rows = rows_d(rng);
  for (int r = 0; r < rows; ++r) {
    tabflow::Row row;
    row.push_back(CellValue::text(unique_key ? "Item " + std::to_string(100 + r) : "Item " + std::to_string(r % 3)));
    row.push_back(CellValue::text(regions[static_cast<std::size_t>(cat_d(rng))]));
    row.push_back(CellValue::number(cents(rng) / 100.0));
    row.push_back(CellValue::number(cents(rng) / 10.0 - 2000.0));
    if (r == 1 || pct(rng) < 15) row.push_back(CellValue::null());
    else row.push_back(CellValue::number(static_cast<double>(cents(rng) % 500)));
    row.push_back(CellValue::number(static_cast<double>(pct(rng) % 10) + 0.5));
    t.body.push_back(std::move(row));
  }
  t.units.assign(t.header.size(), std::nullopt);
  return t;
}

} // namespace testing_support
