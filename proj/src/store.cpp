// SPDX-License-Identifier: Apache-2.0
#include "tabflow/store.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/error.hpp"
#include "tabflow/text_util.hpp"

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace tabflow {

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, std::string_view data) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
  }
  std::filesystem::rename(tmp, p);
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::string random_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  return fmt::format("{:016x}", rng());
}

} // namespace

// ---------------------------------------------------------------- config

EngineConfig EngineConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "backend_url", "model",  "mock_script", "context_budget", "sandbox_command", "max_concurrent_exec",
      "data_dir",    "profiles_dir", "limits", "max_steps", "max_consecutive_failures", "interaction",
      "max_concurrent_sessions", "max_upload_bytes", "sense", "preprocess"};
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k == "backend_token")
      throw Error(ErrorCode::InvalidArgument, "backend_token is read from ENGINE_BACKEND_TOKEN only");
    if (!known.count(k)) throw Error(ErrorCode::InvalidArgument, "unknown config key: " + k);
  }
  EngineConfig c;
  try {
    c.backend_url = j.value("backend_url", c.backend_url);
    c.model = j.value("model", c.model);
    c.mock_script = j.value("mock_script", c.mock_script);
    c.context_budget = j.value("context_budget", c.context_budget);
    if (j.contains("sandbox_command")) {
      const auto& sc = j.at("sandbox_command");
      c.sandbox_command = sc.is_string() ? SandboxConfig::parse_command(sc.get<std::string>())
                                         : sc.get<std::vector<std::string>>();
    }
    c.max_concurrent_exec = j.value("max_concurrent_exec", c.max_concurrent_exec);
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.profiles_dir = j.value("profiles_dir", c.profiles_dir.string());
    if (j.contains("limits")) {
      const auto& l = j.at("limits");
      c.limits.time_limit = l.value("time_limit", c.limits.time_limit);
      c.limits.memory_limit_mb = l.value("memory_limit_mb", c.limits.memory_limit_mb);
      c.limits.output_limit_kb = l.value("output_limit_kb", c.limits.output_limit_kb);
    }
    c.max_steps = j.value("max_steps", c.max_steps);
    c.max_consecutive_failures = j.value("max_consecutive_failures", c.max_consecutive_failures);
    if (j.contains("interaction")) {
      auto m = j.at("interaction").get<std::string>();
      if (m == "react") c.interaction = InteractionMode::ReAct;
      else if (m == "dialogue") c.interaction = InteractionMode::Dialogue;
      else throw Error(ErrorCode::InvalidArgument, "interaction must be react or dialogue");
    }
    c.max_concurrent_sessions = j.value("max_concurrent_sessions", c.max_concurrent_sessions);
    c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
    if (j.contains("sense")) {
      const auto& s = j.at("sense");
      c.sense.sample_cap = s.value("sample_cap", c.sense.sample_cap);
      c.sense.categorical_max_distinct = s.value("categorical_max_distinct", c.sense.categorical_max_distinct);
      c.sense.parse_threshold = s.value("parse_threshold", c.sense.parse_threshold);
      c.sense.seed = s.value("seed", c.sense.seed);
      c.sense.include_stats = s.value("include_stats", c.sense.include_stats);
      if (s.contains("sample_strategy")) {
        auto v = s.at("sample_strategy").get<std::string>();
        if (v == "head") c.sense.sample_strategy = SampleStrategy::Head;
        else if (v == "head_tail_random") c.sense.sample_strategy = SampleStrategy::HeadTailRandom;
        else throw Error(ErrorCode::InvalidArgument, "sample_strategy must be head or head_tail_random");
      }
    }
    if (j.contains("preprocess")) c.preprocess = j.at("preprocess");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  if (c.max_steps < 1) throw Error(ErrorCode::InvalidArgument, "max_steps must be at least 1");
  if (c.max_concurrent_sessions < 1) throw Error(ErrorCode::InvalidArgument, "max_concurrent_sessions must be at least 1");
  (void)c.preprocess_config();
  return c;
}

EngineConfig EngineConfig::load(const std::optional<std::filesystem::path>& path) {
  EngineConfig c;
  if (path) {
    auto j = nlohmann::json::parse(read_file(*path), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, path->string() + " is not valid JSON");
    c = from_json(j);
  }
  c.apply_env();
  return c;
}

void EngineConfig::apply_env() {
  if (auto v = env("ENGINE_BACKEND_URL")) backend_url = *v;
  if (auto v = env("ENGINE_BACKEND_TOKEN")) backend_token = *v;
  if (auto v = env("ENGINE_BACKEND_MODEL")) model = *v;
  if (auto v = env("ENGINE_MOCK_SCRIPT")) mock_script = *v;
  if (auto v = env("ENGINE_SANDBOX_CMD")) sandbox_command = SandboxConfig::parse_command(*v);
  if (auto v = env("ENGINE_DATA_DIR")) data_dir = *v;
}

PreprocessConfig EngineConfig::preprocess_config() const {
  if (preprocess.empty()) return {};
  return PreprocessConfig::from_json(preprocess.dump());
}

SandboxConfig EngineConfig::sandbox_config() const {
  SandboxConfig s;
  s.command = sandbox_command;
  s.max_concurrent = max_concurrent_exec;
  return s;
}

std::shared_ptr<ModelBackend> EngineConfig::make_backend() const {
  if (!mock_script.empty()) return MockBackend::from_file(mock_script);
  if (!backend_url.empty()) {
    HttpBackendConfig h;
    h.url = backend_url;
    h.model = model;
    h.token = backend_token;
    h.context_budget = context_budget;
    return std::make_shared<HttpBackend>(h);
  }
  throw Error(ErrorCode::InvalidArgument,
              "no model backend configured: set ENGINE_BACKEND_URL or ENGINE_MOCK_SCRIPT");
}

PromptProfile EngineConfig::profile(const std::string& name) const {
  if (name == "default" || name.empty()) return {};
  if (name == "assistant") return assistant_profile();
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'))
      throw Error(ErrorCode::InvalidArgument, "bad profile name: " + name);
  if (!profiles_dir.empty()) {
    auto p = profiles_dir / (name + ".json");
    if (std::filesystem::exists(p)) {
      auto j = nlohmann::json::parse(read_file(p), nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::InvalidArgument, p.string() + " is not valid JSON");
      auto profile = PromptProfile::from_json(j);
      profile.name = name;
      return profile;
    }
  }
  throw Error(ErrorCode::NotFound, "unknown prompt profile: " + name);
}

// ---------------------------------------------------------------- tables

nlohmann::json StoredTable::summary() const {
  return {{"table_id", id}, {"name", name}, {"metadata", metadata_to_json(metadata)}};
}

TableStore::TableStore(std::filesystem::path dir, PreprocessConfig pre, SensePolicy sense)
    : dir_(std::move(dir)), pre_(std::move(pre)), sense_(sense) {
  std::filesystem::create_directories(dir_);
}

std::string TableStore::content_id(std::string_view bytes) { return text::sha256_hex(bytes).substr(0, 16); }

std::shared_ptr<const StoredTable> TableStore::put(std::string_view bytes, const std::string& name,
                                                   TableFormat format) {
  const auto id = content_id(bytes);
  {
    std::lock_guard lock(mu_);
    if (auto it = tables_.find(id); it != tables_.end()) return it->second;
  }
  auto raw = parse_table(bytes, format);
  raw.set_source_name(name);
  auto quality = check_collection_standards(raw, bytes.size());
  if (!quality.passed) {
    std::vector<std::string> msgs;
    for (const auto& v : quality.violations) msgs.push_back(v.rule_id + ": " + v.message);
    throw Error(ErrorCode::InvalidArgument, "table fails collection standards: " + text::join(msgs, "; "));
  }
  auto st = std::make_shared<StoredTable>();
  st->id = id;
  st->name = name;
  st->table = preprocess(raw, pre_);
  st->table.source_name = name;
  st->metadata = sense(st->table, sense_);
  st->metadata.name = name;
  st->csv_path = dir_ / (id + ".csv");
  write_file(st->csv_path, serialize_csv(st->table));
  write_file(dir_ / (id + ".json"), st->summary().dump(2));

  std::lock_guard lock(mu_);
  auto [it, inserted] = tables_.emplace(id, std::move(st));
  return it->second;
}

std::shared_ptr<const StoredTable> TableStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = tables_.find(id);
  if (it == tables_.end()) throw Error(ErrorCode::NotFound, "unknown table: " + id);
  return it->second;
}

// ---------------------------------------------------------------- sessions

std::string_view to_string(SessionState s) {
  switch (s) {
  case SessionState::Queued: return "queued";
  case SessionState::Running: return "running";
  case SessionState::Completed: return "completed";
  case SessionState::Failed: return "failed";
  }
  return "queued";
}

SessionRecord::SessionRecord(std::string id, SessionInput input) : id_(std::move(id)), input_(std::move(input)) {}

void SessionRecord::push(std::string type, nlohmann::json data) {
  {
    std::lock_guard lock(mu_);
    events_.push_back({events_.size() + 1, std::move(type), std::move(data)});
  }
  cv_.notify_all();
}

void SessionRecord::set_state(SessionState s) {
  {
    std::lock_guard lock(mu_);
    state_ = s;
    events_.push_back({events_.size() + 1, "status", {{"state", to_string(s)}}});
  }
  cv_.notify_all();
}

void SessionRecord::finish(SessionState state, std::optional<nlohmann::json> trace, std::string error) {
  {
    std::lock_guard lock(mu_);
    state_ = state;
    trace_ = std::move(trace);
    error_ = std::move(error);
    if (state == SessionState::Completed) {
      nlohmann::json data = {{"status", trace_ ? (*trace_)["status"] : nlohmann::json("")},
                             {"final", trace_ ? (*trace_)["final"] : nlohmann::json(nullptr)}};
      events_.push_back({events_.size() + 1, "final", std::move(data)});
    } else {
      events_.push_back({events_.size() + 1, "error", {{"error", error_}}});
    }
  }
  cv_.notify_all();
}

SessionState SessionRecord::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

bool SessionRecord::done() const {
  std::lock_guard lock(mu_);
  return state_ == SessionState::Completed || state_ == SessionState::Failed;
}

std::optional<nlohmann::json> SessionRecord::trace() const {
  std::lock_guard lock(mu_);
  return trace_;
}

nlohmann::json SessionRecord::summary() const {
  std::lock_guard lock(mu_);
  nlohmann::json j = {{"session_id", id_}, {"state", to_string(state_)}, {"events", events_.size()}};
  if (!error_.empty()) j["error"] = error_;
  j["trace"] = trace_ ? *trace_ : nlohmann::json(nullptr);
  return j;
}

std::vector<SessionEvent> SessionRecord::events_after(std::uint64_t after, std::chrono::milliseconds wait) const {
  std::unique_lock lock(mu_);
  auto ready = [&] {
    return events_.size() > after || state_ == SessionState::Completed || state_ == SessionState::Failed;
  };
  cv_.wait_for(lock, wait, ready);
  std::vector<SessionEvent> out;
  for (std::size_t i = after; i < events_.size(); ++i) out.push_back(events_[i]);
  return out;
}

SessionStore::SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::shared_ptr<SessionRecord> SessionStore::create(SessionInput input) {
  auto id = random_id();
  auto rec = std::make_shared<SessionRecord>(id, std::move(input));
  std::lock_guard lock(mu_);
  sessions_.emplace(id, rec);
  return rec;
}

std::shared_ptr<SessionRecord> SessionStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session: " + id);
  return it->second;
}

void SessionStore::persist(const SessionRecord& r) const {
  if (auto t = r.trace()) write_file(dir_ / (r.id() + ".json"), t->dump(2));
}

} // namespace tabflow
