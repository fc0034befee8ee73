// SPDX-License-Identifier: Apache-2.0
#include "tabflow/backend.hpp"

#include "tabflow/error.hpp"

#include <httplib.h>

#include <fstream>
#include <sstream>
#include <thread>

namespace tabflow {

nlohmann::json ChatRequest::to_json() const {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", model}, {"messages", std::move(msgs)}, {"temperature", temperature},
          {"max_tokens", max_tokens}};
}

MockBackend::MockBackend(std::vector<std::string> responses, std::vector<Rule> rules,
                         bool repeat_last)
    : rules_(std::move(rules)), repeat_last_(repeat_last) {
  for (auto& r : responses) responses_.push_back({std::move(r), false});
}

std::shared_ptr<MockBackend> MockBackend::from_json(const nlohmann::json& script) {
  auto mock = std::make_shared<MockBackend>();
  const nlohmann::json* responses = &script;
  if (script.is_object()) {
    responses = script.contains("responses") ? &script.at("responses") : nullptr;
    if (script.contains("rules"))
      for (const auto& r : script.at("rules")) {
        if (!r.is_object() || !r.contains("match") || !r.contains("response"))
          throw Error(ErrorCode::InvalidArgument, "mock rule needs match and response");
        mock->rules_.push_back({r.at("match").get<std::string>(), r.at("response").get<std::string>()});
      }
    mock->repeat_last_ = script.value("repeat_last", false);
  } else if (!script.is_array()) {
    throw Error(ErrorCode::InvalidArgument, "mock script must be an object or a list");
  }
  if (responses) {
    if (!responses->is_array())
      throw Error(ErrorCode::InvalidArgument, "mock responses must be a list");
    for (const auto& r : *responses) {
      if (r.is_string())
        mock->responses_.push_back({r.get<std::string>(), false});
      else if (r.is_object() && r.contains("error"))
        mock->responses_.push_back({r.at("error").get<std::string>(), true});
      else
        throw Error(ErrorCode::InvalidArgument, "mock response must be a string or {error}");
    }
  }
  return mock;
}

std::shared_ptr<MockBackend> MockBackend::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open mock script " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(nlohmann::json::parse(ss.str()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, "mock script " + path + ": " + e.what());
  }
}

std::string MockBackend::complete(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  calls_.push_back(request);
  for (const auto& rule : rules_)
    for (const auto& m : request.messages)
      if (m.content.find(rule.match) != std::string::npos) return rule.response;
  if (cursor_ >= responses_.size()) {
    if (repeat_last_ && !responses_.empty()) {
      const auto& last = responses_.back();
      if (last.is_error) throw Error(ErrorCode::BackendFailure, "mock: " + last.text);
      return last.text;
    }
    throw Error(ErrorCode::BackendFailure, "mock script exhausted");
  }
  const auto& e = responses_[cursor_++];
  if (e.is_error) throw Error(ErrorCode::BackendFailure, "mock: " + e.text);
  return e.text;
}

std::vector<ChatRequest> MockBackend::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(mu_);
  return calls_.size();
}

std::size_t MockBackend::remaining() const {
  std::lock_guard lock(mu_);
  return responses_.size() - std::min(cursor_, responses_.size());
}

std::optional<std::string> parse_completion_body(const nlohmann::json& body) {
  if (!body.is_object()) return std::nullopt;
  if (body.contains("content") && body["content"].is_string()) return body["content"].get<std::string>();
  if (body.contains("choices") && body["choices"].is_array() && !body["choices"].empty()) {
    const auto& c = body["choices"][0];
    if (c.contains("message") && c["message"].contains("content") &&
        c["message"]["content"].is_string())
      return c["message"]["content"].get<std::string>();
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
  }
  return std::nullopt;
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  auto scheme = cfg_.url.find("://");
  if (scheme == std::string::npos)
    throw Error(ErrorCode::InvalidArgument, "backend url needs a scheme: " + cfg_.url);
  auto path = cfg_.url.find('/', scheme + 3);
  scheme_host_port_ = cfg_.url.substr(0, path);
  path_ = path == std::string::npos ? "/" : cfg_.url.substr(path);
  if (cfg_.attempts < 1) cfg_.attempts = 1;
}

std::string HttpBackend::complete(const ChatRequest& request) {
  auto body = request.to_json();
  if (request.model.empty()) body["model"] = cfg_.model;
  const auto payload = body.dump();
  std::string last_error;
  auto backoff = cfg_.initial_backoff;
  for (int attempt = 0; attempt < cfg_.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(cfg_.timeout);
    client.set_read_timeout(cfg_.timeout);
    client.set_write_timeout(cfg_.timeout);
    httplib::Headers headers;
    if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw Error(ErrorCode::BackendFailure, "backend rejected request with status " +
                                                 std::to_string(res->status));
    try {
      if (auto content = parse_completion_body(nlohmann::json::parse(res->body))) return *content;
      last_error = "response has no content";
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("invalid JSON response: ") + e.what();
    }
  }
  throw Error(ErrorCode::BackendFailure, "backend failed after " + std::to_string(cfg_.attempts) +
                                             " attempts: " + last_error);
}

} // namespace tabflow
