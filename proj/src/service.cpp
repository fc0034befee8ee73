// SPDX-License-Identifier: Apache-2.0
#include "tabflow/service.hpp"

#include "tabflow/backend.hpp"
#include "tabflow/error.hpp"
#include "tabflow/sandbox.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <atomic>
#include <fstream>
#include <list>
#include <regex>
#include <sstream>
#include <thread>

namespace tabflow {

int http_status(ErrorCode code) {
  switch (code) {
  case ErrorCode::NotFound: return 404;
  case ErrorCode::BackendFailure: return 502;
  case ErrorCode::SandboxBusy:
  case ErrorCode::SetupError: return 503;
  case ErrorCode::IoError: return 500;
  default: return 400;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

// Runs a handler, mapping engine and JSON errors onto HTTP responses.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_error(res, http_status(e.code()), to_string(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "InvalidArgument", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "Internal", e.what());
  }
}

TableFormat format_for(const std::string& filename, const std::string& content_type) {
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  const auto f = lower(filename), ct = lower(content_type);
  if (f.size() >= 4 && f.substr(f.size() - 4) == ".tsv") return TableFormat::TSV;
  if (ct.find("tab-separated") != std::string::npos) return TableFormat::TSV;
  return TableFormat::CSV;
}

std::string sse_frame(const SessionEvent& ev) {
  return fmt::format("id: {}\nevent: {}\ndata: {}\n\n", ev.id, ev.type, ev.data.dump());
}

} // namespace

struct Service::Impl {
  EngineConfig cfg;
  std::shared_ptr<ModelBackend> backend;
  std::shared_ptr<Sandbox> sandbox;
  ToolRegistry tools;
  TableStore tables;
  SessionStore sessions;
  std::filesystem::path assets_dir;
  httplib::Server server;

  std::mutex workers_mu;
  std::list<std::jthread> workers;
  std::atomic<std::size_t> active{0};
  Service* owner = nullptr;

  Impl(EngineConfig c, std::shared_ptr<ModelBackend> b, std::shared_ptr<Sandbox> s)
      : cfg(std::move(c)), backend(std::move(b)), sandbox(std::move(s)), tools(sandbox, cfg.limits),
        tables(cfg.data_dir / "tables", cfg.preprocess_config(), cfg.sense), sessions(cfg.data_dir / "sessions"),
        assets_dir(cfg.data_dir / "assets") {
    std::filesystem::create_directories(assets_dir);
  }

  void run(const std::shared_ptr<SessionRecord>& rec, InteractionMode interaction) {
    rec->set_state(SessionState::Running);
    try {
      SessionOptions so;
      so.interaction = interaction;
      so.max_consecutive_failures = cfg.max_consecutive_failures;
      so.profile = cfg.profile(rec->input().prompt_profile);
      so.model = cfg.model;
      so.artifact_dir = assets_dir / rec->id();
      std::filesystem::create_directories(*so.artifact_dir);
      std::weak_ptr<SessionRecord> weak = rec;
      so.on_step = [weak](const Step& s) {
        if (auto r = weak.lock()) r->push("step", step_to_json(s));
      };
      auto trace = run_session(rec->input(), *backend, tools, so);
      if (trace.status == TraceStatus::BackendFailure)
        rec->finish(SessionState::Failed, trace.to_json(), "backend failure: " + trace.error);
      else
        rec->finish(SessionState::Completed, trace.to_json());
    } catch (const std::exception& e) {
      rec->finish(SessionState::Failed, std::nullopt, e.what());
    }
    try {
      sessions.persist(*rec);
    } catch (const std::exception&) {
      // The in-memory record stays authoritative.
    }
  }

  void routes();
};

void Service::Impl::routes() {
  server.set_payload_max_length(static_cast<std::size_t>(cfg.max_upload_bytes) + (1u << 20));
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID");
    res.status = 204;
  });

  server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      nlohmann::json j = {{"status", "ok"}, {"active_sessions", active.load()}};
      try {
        j["sandbox"] = sandbox->health_check();
      } catch (const Error& e) {
        j["status"] = "degraded";
        j["sandbox"] = {{"error", e.what()}};
        send_json(res, 503, j);
        return;
      }
      send_json(res, 200, j);
    });
  });

  server.Post("/v1/tables", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::string bytes, name, filename, content_type;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("file")) throw Error(ErrorCode::InvalidArgument, "multipart field \"file\" is required");
        const auto f = req.get_file_value("file");
        bytes = f.content;
        filename = f.filename;
        content_type = f.content_type;
        name = req.has_file("name") ? req.get_file_value("name").content : f.filename;
      } else {
        bytes = req.body;
        content_type = req.get_header_value("Content-Type");
        name = req.has_param("name") ? req.get_param_value("name") : "table";
        filename = name;
      }
      if (bytes.size() > cfg.max_upload_bytes) {
        send_error(res, 413, "InvalidArgument", "table exceeds the upload limit");
        return;
      }
      if (bytes.empty()) throw Error(ErrorCode::EmptyInput, "empty upload");
      if (name.empty()) name = "table";
      auto t = tables.put(bytes, name, format_for(filename, content_type));
      send_json(res, 201, t->summary());
    });
  });

  server.Get(R"(/v1/tables/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, tables.get(req.matches[1])->summary()); });
  });

  server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = nlohmann::json::parse(req.body);
      if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
      SessionInput in;
      in.query = body.contains("question") ? body.at("question").get<std::string>() : body.at("query").get<std::string>();
      for (const auto& id : body.at("table_ids")) in.tables.push_back(tables.get(id.get<std::string>())->handle());
      in.mode = parse_mode(body.value("mode", "icot"));
      in.max_steps = body.value("max_steps", cfg.max_steps);
      in.prompt_profile = body.value("prompt_profile", "default");
      in.validate();
      (void)cfg.profile(in.prompt_profile);
      auto interaction = cfg.interaction;
      if (body.contains("interaction")) {
        auto m = body.at("interaction").get<std::string>();
        if (m == "react") interaction = InteractionMode::ReAct;
        else if (m == "dialogue") interaction = InteractionMode::Dialogue;
        else throw Error(ErrorCode::InvalidArgument, "interaction must be react or dialogue");
      }
      auto rec = owner->start_session(std::move(in), interaction);
      if (body.value("wait", false)) {
        while (!rec->done()) rec->events_after(~std::uint64_t{0} >> 1, std::chrono::milliseconds(200));
        auto summary = rec->summary();
        int status = 200;
        if (rec->state() == SessionState::Failed) status = summary.value("error", "").rfind("backend", 0) == 0 ? 502 : 500;
        send_json(res, status, summary);
        return;
      }
      send_json(res, 202, {{"session_id", rec->id()},
                           {"state", to_string(rec->state())},
                           {"events", "/v1/sessions/" + rec->id() + "/events"}});
    });
  });

  server.Get(R"(/v1/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, sessions.get(req.matches[1])->summary()); });
  });

  server.Get(R"(/v1/sessions/([0-9a-f]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto rec = sessions.get(req.matches[1]);
      std::uint64_t last = 0;
      auto header = req.get_header_value("Last-Event-ID");
      if (header.empty() && req.has_param("last_event_id")) header = req.get_param_value("last_event_id");
      if (!header.empty()) {
        try {
          last = std::stoull(header);
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidArgument, "Last-Event-ID must be an integer");
        }
      }
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [rec, last](std::size_t, httplib::DataSink& sink) mutable {
            if (!sink.is_writable()) return false;
            auto events = rec->events_after(last, std::chrono::milliseconds(1000));
            if (events.empty() && !rec->done()) {
              const std::string ping = ": keep-alive\n\n";
              return sink.write(ping.data(), ping.size());
            }
            for (const auto& ev : events) {
              auto frame = sse_frame(ev);
              if (!sink.write(frame.data(), frame.size())) return false;
              last = ev.id;
            }
            if (rec->done() && rec->events_after(last, std::chrono::milliseconds(0)).empty()) sink.done();
            return true;
          });
    });
  });

  server.Get(R"(/v1/assets/([0-9a-f]+)/([A-Za-z0-9_.-]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string session = req.matches[1], file = req.matches[2];
      if (file.find("..") != std::string::npos) throw Error(ErrorCode::InvalidArgument, "bad asset path");
      auto path = assets_dir / session / file;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error(ErrorCode::NotFound, "unknown asset: " + session + "/" + file);
      std::stringstream ss;
      ss << in.rdbuf();
      res.set_content(ss.str(), path.extension() == ".svg" ? "image/svg+xml" : "application/octet-stream");
    });
  });
}

Service::Service(EngineConfig cfg, std::shared_ptr<ModelBackend> backend, std::shared_ptr<Sandbox> sandbox)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(backend), std::move(sandbox))) {
  impl_->owner = this;
  impl_->routes();
}

Service::~Service() {
  stop();
  drain();
}

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool Service::listen_after_bind() { return impl_->server.listen_after_bind(); }

void Service::stop() { impl_->server.stop(); }

void Service::drain() {
  std::list<std::jthread> workers;
  {
    std::lock_guard lock(impl_->workers_mu);
    workers.swap(impl_->workers);
  }
  workers.clear();
}

httplib::Server& Service::server() { return impl_->server; }
TableStore& Service::tables() { return impl_->tables; }
SessionStore& Service::sessions() { return impl_->sessions; }

std::shared_ptr<SessionRecord> Service::start_session(SessionInput input, InteractionMode interaction) {
  input.validate();
  auto* impl = impl_.get();
  if (impl->active.fetch_add(1) >= impl->cfg.max_concurrent_sessions) {
    impl->active.fetch_sub(1);
    throw Error(ErrorCode::SandboxBusy, "too many concurrent sessions; retry later");
  }
  auto rec = impl->sessions.create(std::move(input));
  std::lock_guard lock(impl->workers_mu);
  impl->workers.emplace_back([impl, rec, interaction] {
    impl->run(rec, interaction);
    impl->active.fetch_sub(1);
  });
  return rec;
}

} // namespace tabflow
