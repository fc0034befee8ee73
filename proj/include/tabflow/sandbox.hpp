// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

namespace tabflow {

/// Logical table name and CSV path, in TABLE_PATH_{i} order.
using TableFiles = std::vector<std::pair<std::string, std::string>>;

struct ExecRequest {
  std::string code;
  TableFiles tables;
  double time_limit = 10.0;         // seconds, wall clock
  std::size_t memory_limit_mb = 512;
  std::size_t output_limit_kb = 64;
  /// When set, files the program creates are copied here before cleanup.
  std::optional<std::filesystem::path> artifact_dir;
};

enum class ExecStatus { Ok, RuntimeError, Timeout, OutputTruncated };

std::string_view to_string(ExecStatus s);

struct ToolResult {
  ExecStatus status = ExecStatus::Ok;
  std::string stdout_text;
  std::string stderr_text;
  double duration = 0;   // seconds
  int exit_code = 0;
  /// Paths relative to the working directory (or artifact dir).
  std::vector<std::string> artifacts;

  bool failed() const { return status == ExecStatus::RuntimeError || status == ExecStatus::Timeout; }
};

struct SandboxConfig {
  /// Interpreter argv; "{file}" is replaced by the source file path.
  std::vector<std::string> command{"python3", "{file}"};
  std::string source_name = "main.py";
  /// Program used by health_check; must be a no-op for the interpreter.
  std::string noop_code = "pass\n";
  std::filesystem::path work_root = std::filesystem::temp_directory_path() / "tabflow-sandbox";
  std::size_t max_concurrent = 0; // 0 = hardware concurrency
  std::chrono::milliseconds queue_timeout{30000};
  double grace = 0.5;             // seconds between SIGTERM and SIGKILL
  bool isolate_network = true;
  /// Private mount namespace in which every mount except the working
  /// directory is read-only.
  bool isolate_filesystem = true;
  std::size_t max_file_mb = 64;

  /// Parses a command template such as "python3 {file}" (whitespace split).
  static std::vector<std::string> parse_command(std::string_view tmpl);
};

/// Runs untrusted code in a fresh working directory under a separate process
/// group with rlimits and, where the kernel allows it, a private network
/// namespace. Safe for concurrent use.
class Sandbox {
public:
  explicit Sandbox(SandboxConfig cfg = {});
  Sandbox(const Sandbox&) = delete;
  Sandbox& operator=(const Sandbox&) = delete;

  /// Throws Error(SetupError) if the interpreter cannot be started and
  /// Error(SandboxBusy) if no slot frees up within queue_timeout.
  ToolResult execute(const ExecRequest& req);

  /// Interpreter version, limits and isolation flags as JSON.
  nlohmann::json health_check();

  const SandboxConfig& config() const { return cfg_; }
  bool network_isolation_available();
  bool filesystem_isolation_available();

private:
  SandboxConfig cfg_;
  std::counting_semaphore<4096> slots_;
  std::once_flag netns_once_;
  bool netns_ok_ = false;
  std::once_flag mntns_once_;
  bool mntns_ok_ = false;
};

} // namespace tabflow
