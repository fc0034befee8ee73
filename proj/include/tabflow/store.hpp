// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tabflow/orchestrator.hpp"
#include "tabflow/preprocess.hpp"
#include "tabflow/sandbox.hpp"
#include "tabflow/sensing.hpp"
#include "tabflow/table.hpp"

#include <json.hpp>

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace tabflow {

class ModelBackend;

/// Engine settings from a JSON file, overridden by the environment:
/// ENGINE_BACKEND_URL, ENGINE_BACKEND_TOKEN, ENGINE_BACKEND_MODEL,
/// ENGINE_MOCK_SCRIPT, ENGINE_SANDBOX_CMD and ENGINE_DATA_DIR. The token is
/// only ever read from the environment.
struct EngineConfig {
  std::string backend_url;
  std::string backend_token;
  std::string model = "default";
  /// Replay script for a mock backend; takes precedence over backend_url.
  std::string mock_script;
  std::size_t context_budget = 0;
  std::vector<std::string> sandbox_command{"python3", "{file}"};
  std::size_t max_concurrent_exec = 0;
  std::filesystem::path data_dir = "tabflow-data";
  std::filesystem::path profiles_dir;
  ToolLimits limits;
  int max_steps = 8;
  int max_consecutive_failures = 3;
  InteractionMode interaction = InteractionMode::ReAct;
  std::size_t max_concurrent_sessions = 4;
  std::uint64_t max_upload_bytes = kMaxTableBytes;
  SensePolicy sense;
  nlohmann::json preprocess = nlohmann::json::object();

  /// Throws Error(InvalidArgument) for unknown keys or bad values.
  static EngineConfig from_json(const nlohmann::json& j);
  /// Reads `path` when given, then applies the environment.
  static EngineConfig load(const std::optional<std::filesystem::path>& path);
  void apply_env();

  PreprocessConfig preprocess_config() const;
  SandboxConfig sandbox_config() const;
  /// Mock when `mock_script` is set, HTTP when `backend_url` is set; throws
  /// Error(InvalidArgument) otherwise.
  std::shared_ptr<ModelBackend> make_backend() const;
  /// "default", "assistant", or `<profiles_dir>/<name>.json`. Throws
  /// Error(NotFound).
  PromptProfile profile(const std::string& name) const;
};

struct StoredTable {
  std::string id;
  std::string name;
  ProcessedTable table;
  TableMetadata metadata;
  std::filesystem::path csv_path;

  TableHandle handle() const { return {metadata, csv_path.string()}; }
  nlohmann::json summary() const;
};

/// Content-addressed tables: the id is a digest of the uploaded bytes, so
/// the same upload always maps to the same id.
class TableStore {
public:
  TableStore(std::filesystem::path dir, PreprocessConfig pre = {}, SensePolicy sense = {});

  static std::string content_id(std::string_view bytes);

  /// Parses, checks collection standards, preprocesses and senses. Throws
  /// Error(InvalidArgument) listing violated rules, or the parse error.
  std::shared_ptr<const StoredTable> put(std::string_view bytes, const std::string& name, TableFormat format);
  /// Throws Error(NotFound).
  std::shared_ptr<const StoredTable> get(const std::string& id) const;

private:
  std::filesystem::path dir_;
  PreprocessConfig pre_;
  SensePolicy sense_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const StoredTable>> tables_;
};

enum class SessionState { Queued, Running, Completed, Failed };

std::string_view to_string(SessionState s);

/// Server-sent event with a per-session sequence id starting at 1.
struct SessionEvent {
  std::uint64_t id = 0;
  std::string type;  // "status", "step", "final", "error"
  nlohmann::json data;
};

/// Live state of one session; every accessor is thread-safe.
class SessionRecord {
public:
  SessionRecord(std::string id, SessionInput input);

  const std::string& id() const { return id_; }
  const SessionInput& input() const { return input_; }

  void push(std::string type, nlohmann::json data);
  void finish(SessionState state, std::optional<nlohmann::json> trace, std::string error = {});
  void set_state(SessionState s);

  SessionState state() const;
  bool done() const;
  std::optional<nlohmann::json> trace() const;
  nlohmann::json summary() const;

  /// Events with id > after; waits up to `wait` for new ones unless done.
  std::vector<SessionEvent> events_after(std::uint64_t after, std::chrono::milliseconds wait) const;

private:
  std::string id_;
  SessionInput input_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  SessionState state_ = SessionState::Queued;
  std::vector<SessionEvent> events_;
  std::optional<nlohmann::json> trace_;
  std::string error_;
};

/// Sessions by id; finished traces are also written to `<dir>/<id>.json`.
class SessionStore {
public:
  explicit SessionStore(std::filesystem::path dir);

  std::shared_ptr<SessionRecord> create(SessionInput input);
  /// Throws Error(NotFound).
  std::shared_ptr<SessionRecord> get(const std::string& id) const;
  void persist(const SessionRecord& r) const;
  const std::filesystem::path& dir() const { return dir_; }

private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<SessionRecord>> sessions_;
};

} // namespace tabflow
