#include <httplib.h>

#include "cipdev/device.hpp"

namespace cipdev::device {
namespace {

using httplib::Request;
using httplib::Response;

void reply(Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(Response& res, int status, const std::string& code, const std::string& detail = {}) {
  nlohmann::json body = {{"error", code}};
  if (!detail.empty()) body["detail"] = detail;
  reply(res, status, body);
}

template <typename T>
bool wait_for(std::future<T>& f, std::chrono::milliseconds timeout) {
  return f.wait_for(timeout) == std::future_status::ready;
}

}  // namespace

const std::vector<ApiRoute>& api_routes() {
  static const std::vector<ApiRoute> routes = {
      {"POST", "/login", false},
      {"GET", "/health", false},
      {"GET", "/patient", true},
      {"PUT", "/cip", true},
      {"GET", "/vitals", true},
      {"GET", "/alarms", true},
      {"POST", "/alarms/1/ack", true},
      {"POST", "/supplementary", true},
      {"GET", "/events", true},
      {"GET", "/diag", true},
      {"GET", "/ui/", false},
  };
  return routes;
}

DeviceApi::DeviceApi(Device& device, auth::UserTable users, const std::string& host,
                     std::uint16_t port, std::filesystem::path ui_dir,
                     std::chrono::milliseconds command_timeout)
    : device_(device),
      users_(std::move(users)),
      command_timeout_(command_timeout),
      http_(std::make_unique<httplib::Server>()) {
  http_->set_socket_options(net::set_listener_options);
  auto& state = device_.state();
  auto now = [this] { return device_.options().clock(); };

  // Returns the session, or writes 401/403 and returns nullopt.
  auto authorize = [this, now](const Request& req, Response& res,
                               bool physician_only) -> std::optional<auth::AuthToken> {
    std::string token = auth::bearer_token(req.get_header_value("Authorization"));
    if (token.empty() && req.has_param("token")) token = req.get_param_value("token");
    auto session = sessions_.validate(token, now());
    if (!session) {
      fail(res, 401, "Unauthorized");
      return std::nullopt;
    }
    if (physician_only && session->role != auth::Role::Physician) {
      fail(res, 403, "Forbidden");
      return std::nullopt;
    }
    return session;
  };

  http_->Get("/health", [](const Request&, Response& res) { reply(res, 200, {{"status", "ok"}}); });

  http_->Post("/login", [this, now](const Request& req, Response& res) {
    std::string user;
    std::string password;
    try {
      auto body = nlohmann::json::parse(req.body);
      user = body.at("user").get<std::string>();
      password = body.at("password").get<std::string>();
    } catch (const std::exception&) {
      return fail(res, 400, "BadRequest");
    }
    auto verified = users_.verify(user, password);
    if (!verified) return fail(res, 401, "BadCredentials");
    auto token = sessions_.issue(verified->name, verified->role, now());
    reply(res, 200, {{"token", token.token},
                     {"expiry", token.expiry},
                     {"principal", token.principal},
                     {"role", auth::to_string(token.role)}});
  });

  http_->Get("/patient", [&state, authorize](const Request& req, Response& res) {
    if (!authorize(req, res, false)) return;
    auto card = state.current_patient();
    if (!card) return fail(res, 404, "NoCurrentPatient");
    reply(res, 200, *card);
  });

  http_->Put("/cip", [this, authorize](const Request& req, Response& res) {
    auto session = authorize(req, res, true);
    if (!session) return;
    CipPatch patch;
    try {
      patch = nlohmann::json::parse(req.body).get<CipPatch>();
    } catch (const CipError& e) {
      return reply(res, 400, {{"error", to_string(e.code())}, {"field", e.field()}});
    } catch (const std::exception& e) {
      return fail(res, 400, "BadRequest", e.what());
    }
    auto future = device_.update_card(std::move(patch), session->principal);
    if (!wait_for(future, command_timeout_)) return fail(res, 504, "Timeout");
    try {
      reply(res, 200, future.get());
    } catch (const CipError& e) {
      reply(res, 400, {{"error", to_string(e.code())}, {"field", e.field()}});
    } catch (const agents::AgentError& e) {
      const int status = e.code() == agents::AgentErrorCode::NoCurrentPatient ? 409 : 502;
      fail(res, status, to_string(e.code()), e.what());
    }
  });

  http_->Get("/vitals", [&state, authorize](const Request& req, Response& res) {
    if (!authorize(req, res, false)) return;
    std::size_t limit = 100;
    if (req.has_param("limit")) {
      try {
        limit = std::stoul(req.get_param_value("limit"));
      } catch (const std::exception&) {
        return fail(res, 400, "BadRequest", "limit");
      }
    }
    auto latest = state.latest_results();
    auto project = [&](vitals::Kind kind) {
      auto it = latest.find(kind);
      return nlohmann::json{{"kind", vitals::to_string(kind)},
                            {"samples", state.recent_samples(kind, limit)},
                            {"latest_result", it == latest.end() ? nlohmann::json() : nlohmann::json(it->second)}};
    };
    if (req.has_param("kind")) {
      auto kind = vitals::kind_from_string(req.get_param_value("kind"));
      if (!kind) return fail(res, 400, "UnknownVitalType");
      return reply(res, 200, project(*kind));
    }
    nlohmann::json all = nlohmann::json::array();
    for (auto kind : vitals::kAllKinds) all.push_back(project(kind));
    reply(res, 200, all);
  });

  http_->Get("/alarms", [&state, authorize](const Request& req, Response& res) {
    if (!authorize(req, res, false)) return;
    reply(res, 200, state.alarms());
  });

  http_->Post(R"(/alarms/([^/]+)/ack)", [this, authorize](const Request& req, Response& res) {
    auto session = authorize(req, res, true);
    if (!session) return;
    std::uint64_t id = 0;
    try {
      id = std::stoull(req.matches[1]);
    } catch (const std::exception&) {
      return fail(res, 404, "UnknownAlarmId");
    }
    try {
      reply(res, 200, device_.acknowledge_alarm(id, session->principal));
    } catch (const agents::AgentError& e) {
      fail(res, e.code() == agents::AgentErrorCode::AlreadyAcknowledged ? 409 : 404, to_string(e.code()));
    }
  });

  http_->Post("/supplementary", [this, authorize](const Request& req, Response& res) {
    if (!authorize(req, res, true)) return;
    auto future = device_.request_supplementary();
    if (!wait_for(future, command_timeout_)) return fail(res, 504, "Timeout");
    auto response = future.get();
    if (response.ok) return reply(res, 200, response);
    int status = 502;
    if (response.cause == "NoCurrentPatient") status = 409;
    if (response.cause == "UnknownPatient") status = 404;
    if (response.cause == "Unauthorized") status = 401;
    reply(res, status, {{"error", response.cause}, {"upstream", response.cause != "NoCurrentPatient"}});
  });

  http_->Get("/diag", [this, &state, authorize](const Request& req, Response& res) {
    if (!authorize(req, res, false)) return;
    nlohmann::json counters = state.counters();
    reply(res, 200,
          {{"counters", counters},
           {"mode", device_.runtime().mode() == agents::Runtime::Mode::Deterministic ? "deterministic"
                                                                                      : "threaded"}});
  });

  http_->Get("/events", [this, &state, authorize](const Request& req, Response& res) {
    if (!authorize(req, res, false)) return;
    std::uint64_t start = 0;
    try {
      if (req.has_header("Last-Event-ID")) start = std::stoull(req.get_header_value("Last-Event-ID"));
      if (req.has_param("since")) start = std::stoull(req.get_param_value("since"));
    } catch (const std::exception&) {
      return fail(res, 400, "BadRequest");
    }
    auto cursor = std::make_shared<std::uint64_t>(start);
    res.set_chunked_content_provider(
        "text/event-stream", [this, &state, cursor](std::size_t, httplib::DataSink& sink) {
          if (stopping_) return false;
          state.wait_events(*cursor, std::chrono::milliseconds(500));
          auto events = state.events_since(*cursor);
          if (events.empty()) {
            const std::string keepalive = ": keepalive\n\n";
            return sink.write(keepalive.data(), keepalive.size());
          }
          for (const auto& ev : events) {
            nlohmann::json data = ev.data;
            std::string chunk = "id: " + std::to_string(ev.seq) + "\nevent: " + ev.type +
                                "\ndata: " + data.dump() + "\n\n";
            if (!sink.write(chunk.data(), chunk.size())) return false;
            *cursor = ev.seq;
          }
          return !stopping_.load();
        });
  });

  if (!ui_dir.empty() && std::filesystem::is_directory(ui_dir)) {
    http_->set_mount_point("/ui", ui_dir.string());
  } else {
    http_->Get(R"(/ui(/.*)?)", [](const Request&, Response& res) { fail(res, 404, "NoUiInstalled"); });
  }

  if (port == 0) {
    int bound = http_->bind_to_any_port(host);
    if (bound < 0) throw net::NetError(net::NetErrorCode::Io, "http bind failed");
    port_ = static_cast<std::uint16_t>(bound);
  } else {
    if (!http_->bind_to_port(host, port)) throw net::NetError(net::NetErrorCode::PortInUse, std::to_string(port));
    port_ = port;
  }
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
}

DeviceApi::~DeviceApi() { stop(); }

void DeviceApi::stop() {
  if (stopping_.exchange(true)) return;
  http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace cipdev::device
