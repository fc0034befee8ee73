// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tabflow/error.hpp"
#include "tabflow/store.hpp"

#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace tabflow {

class ModelBackend;
class Sandbox;

/// HTTP status for an engine error code.
int http_status(ErrorCode code);

/// JSON API plus server-sent events over the engine:
///   GET  /v1/health
///   POST /v1/tables                  multipart "file" or raw CSV/TSV body
///   GET  /v1/tables/{id}
///   POST /v1/sessions                {"query", "table_ids", ...}
///   GET  /v1/sessions/{id}
///   GET  /v1/sessions/{id}/events    text/event-stream, honours Last-Event-ID
///   GET  /v1/assets/{session}/{file}
class Service {
public:
  Service(EngineConfig cfg, std::shared_ptr<ModelBackend> backend, std::shared_ptr<Sandbox> sandbox);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  bool listen_after_bind();
  void stop();
  /// Waits for every session worker to finish.
  void drain();

  httplib::Server& server();
  TableStore& tables();
  SessionStore& sessions();

  /// Starts a session in the background. Throws Error(SandboxBusy) when the
  /// concurrent-session limit is reached.
  std::shared_ptr<SessionRecord> start_session(SessionInput input, InteractionMode interaction);

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace tabflow
