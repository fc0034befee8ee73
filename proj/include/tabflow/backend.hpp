// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace tabflow {

struct ChatMessage {
  std::string role;
  std::string content;
  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 2048;

  nlohmann::json to_json() const;
};

/// A chat-completion model. Implementations must be safe to share across
/// sessions; `complete` throws Error(BackendFailure) on transport failure.
class ModelBackend {
public:
  virtual ~ModelBackend() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
  /// Approximate context budget in tokens; 0 means unlimited.
  virtual std::size_t context_budget() const { return 0; }
};

/// Replays an ordered response script. Optional rules answer any request
/// whose message text contains `match`, ahead of the ordered script.
///
/// Script file format:
///   {"responses": ["...", {"error": "timeout"}, ...],
///    "rules": [{"match": "id-17", "response": "Score: 9"}],
///    "repeat_last": false}
/// A bare JSON array is accepted as `responses`.
class MockBackend : public ModelBackend {
public:
  struct Rule {
    std::string match;
    std::string response;
  };

  MockBackend() = default;
  explicit MockBackend(std::vector<std::string> responses, std::vector<Rule> rules = {},
                       bool repeat_last = false);

  static std::shared_ptr<MockBackend> from_json(const nlohmann::json& script);
  static std::shared_ptr<MockBackend> from_file(const std::string& path);

  std::string complete(const ChatRequest& request) override;

  std::vector<ChatRequest> calls() const;
  std::size_t call_count() const;
  std::size_t remaining() const;

private:
  struct Entry {
    std::string text;
    bool is_error = false;
  };
  mutable std::mutex mu_;
  std::vector<Entry> responses_;
  std::vector<Rule> rules_;
  bool repeat_last_ = false;
  std::size_t cursor_ = 0;
  std::vector<ChatRequest> calls_;
};

struct HttpBackendConfig {
  /// Full endpoint URL, e.g. http://127.0.0.1:8000/v1/chat/completions
  std::string url;
  std::string model = "default";
  /// Bearer token; read from the environment by EngineConfig, never from files.
  std::string token;
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{60};
  std::size_t context_budget = 0;
};

/// Chat-completion over HTTP: request {model, messages, temperature,
/// max_tokens}, response {content} (OpenAI-style choices are also read).
class HttpBackend : public ModelBackend {
public:
  explicit HttpBackend(HttpBackendConfig cfg);
  std::string complete(const ChatRequest& request) override;
  std::size_t context_budget() const override { return cfg_.context_budget; }

private:
  HttpBackendConfig cfg_;
  std::string scheme_host_port_;
  std::string path_;
};

/// Extracts the reply text from a chat-completion response body.
std::optional<std::string> parse_completion_body(const nlohmann::json& body);

} // namespace tabflow
