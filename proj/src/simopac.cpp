#include "cipdev/simopac.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace cipdev::simopac {
namespace {

nlohmann::json error_body(SimopacErrorCode code) { return {{"error", to_string(code)}}; }

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> parse_serial(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v == 0) return std::nullopt;
  return v;
}

const std::string& field(const hl7::Segment& seg, std::size_t i) {
  static const std::string empty;
  return i < seg.size() ? seg[i] : empty;
}

}  // namespace

const char* to_string(SimopacErrorCode code) {
  switch (code) {
    case SimopacErrorCode::BadCredentials: return "BadCredentials";
    case SimopacErrorCode::Unauthorized: return "Unauthorized";
    case SimopacErrorCode::Forbidden: return "Forbidden";
    case SimopacErrorCode::UnknownPatient: return "UnknownPatient";
    case SimopacErrorCode::CorruptLogLine: return "CorruptLogLine";
    case SimopacErrorCode::Io: return "Io";
  }
  return "Unknown";
}

SimopacError::SimopacError(SimopacErrorCode code, const std::string& detail, std::size_t line,
                           std::uintmax_t valid_bytes)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code),
      line_(line),
      valid_bytes_(valid_bytes) {}

void to_json(nlohmann::json& j, const Observation& o) {
  j = {{"kind", o.kind},
       {"statistic", o.statistic},
       {"value", o.value},
       {"units", o.units},
       {"window_start", o.window_start},
       {"window_end", o.window_end},
       {"received_at", o.received_at},
       {"source_address", o.source_address},
       {"control_id", o.control_id}};
}

void from_json(const nlohmann::json& j, Observation& o) {
  o.kind = j.at("kind").get<std::string>();
  o.statistic = j.at("statistic").get<std::string>();
  o.value = j.at("value").get<double>();
  o.units = j.at("units").get<std::string>();
  o.window_start = j.at("window_start").get<std::int64_t>();
  o.window_end = j.at("window_end").get<std::int64_t>();
  o.received_at = j.at("received_at").get<std::int64_t>();
  o.source_address = j.at("source_address").get<std::string>();
  o.control_id = j.value("control_id", std::string());
}

void to_json(nlohmann::json& j, const AuditEntry& a) {
  j = {{"serial", a.serial},
       {"requester", a.requester},
       {"address", a.address},
       {"timestamp", a.timestamp},
       {"outcome", a.outcome}};
}

void from_json(const nlohmann::json& j, AuditEntry& a) {
  a.serial = j.at("serial").get<std::uint64_t>();
  a.requester = j.at("requester").get<std::string>();
  a.address = j.at("address").get<std::string>();
  a.timestamp = j.at("timestamp").get<std::int64_t>();
  a.outcome = j.at("outcome").get<std::string>();
}

// ---- Store ----

Store::Store(std::filesystem::path log_path, Clock clock)
    : log_path_(std::move(log_path)), clock_(std::move(clock)) {}

void Store::preload(std::uint64_t serial, Demographics demographics) {
  std::lock_guard lk(mu_);
  auto& rec = records_[serial];
  rec.serial = serial;
  rec.demographics = std::move(demographics);
}

std::size_t Store::restore() {
  std::lock_guard lk(mu_);
  if (log_path_.empty() || !std::filesystem::exists(log_path_)) return 0;
  std::ifstream in(log_path_, std::ios::binary);
  if (!in) throw SimopacError(SimopacErrorCode::Io, "cannot open " + log_path_.string());

  std::size_t applied = 0;
  std::size_t line_no = 0;
  std::uintmax_t good_bytes = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const bool terminated = !in.eof();
    if (line.empty() && !terminated) break;
    try {
      auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      // Validate fully before touching state.
      if (type == "observation") {
        j.at("payload").at("serial").get<std::uint64_t>();
        j.at("payload").at("observation").get<Observation>();
      } else if (type == "audit") {
        j.at("payload").get<AuditEntry>();
      } else {
        throw std::runtime_error("unknown record type " + type);
      }
      apply(type, j.at("payload"));
    } catch (const std::exception& e) {
      throw SimopacError(SimopacErrorCode::CorruptLogLine,
                         "line " + std::to_string(line_no) + ": " + e.what(), line_no, good_bytes);
    }
    ++applied;
    good_bytes += line.size() + (terminated ? 1 : 0);
  }
  return applied;
}

void Store::truncate_log(std::uintmax_t bytes) {
  std::lock_guard lk(mu_);
  if (log_.is_open()) log_.close();
  std::filesystem::resize_file(log_path_, bytes);
}

void Store::append(const std::string& type, const nlohmann::json& payload) {
  if (log_path_.empty()) return;
  if (!log_.is_open()) {
    if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
    log_.open(log_path_, std::ios::app | std::ios::binary);
    if (!log_) throw SimopacError(SimopacErrorCode::Io, "cannot open " + log_path_.string());
  }
  nlohmann::json line = {{"type", type}, {"payload", payload}, {"ts", clock_()}};
  log_ << line.dump() << '\n';
  log_.flush();
  if (!log_) throw SimopacError(SimopacErrorCode::Io, "write failed");
}

void Store::apply(const std::string& type, const nlohmann::json& payload) {
  if (type == "observation") {
    const auto serial = payload.at("serial").get<std::uint64_t>();
    auto& rec = records_[serial];
    rec.serial = serial;
    rec.observations.push_back(payload.at("observation").get<Observation>());
  } else if (type == "audit") {
    auto entry = payload.get<AuditEntry>();
    auto it = records_.find(entry.serial);
    if (it != records_.end()) it->second.audit.push_back(entry);
    ++audits_;
  }
}

void Store::add_observations(std::uint64_t serial, const std::vector<Observation>& observations) {
  std::lock_guard lk(mu_);
  for (const auto& o : observations) {
    nlohmann::json payload = {{"serial", serial}, {"observation", o}};
    append("observation", payload);
    apply("observation", payload);
  }
}

void Store::add_audit(const AuditEntry& entry) {
  std::lock_guard lk(mu_);
  nlohmann::json payload = entry;
  append("audit", payload);
  apply("audit", payload);
}

std::optional<EhrRecord> Store::get(std::uint64_t serial) const {
  std::lock_guard lk(mu_);
  auto it = records_.find(serial);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

StoreCounts Store::counts() const {
  std::lock_guard lk(mu_);
  StoreCounts c;
  c.records = records_.size();
  for (const auto& [_, rec] : records_) c.observations += rec.observations.size();
  c.audits = audits_;
  return c;
}

// ---- Service ----

nlohmann::json record_labels(const std::string& language, std::string* resolved) {
  static const nlohmann::json bundles = {
      {"en",
       {{"serial", "Card serial"},
        {"display_name", "Patient"},
        {"birth_year", "Year of birth"},
        {"observations", "Observations"},
        {"audit", "Access log"}}},
      {"ro",
       {{"serial", "Serie card"},
        {"display_name", "Pacient"},
        {"birth_year", "Anul nașterii"},
        {"observations", "Observații"},
        {"audit", "Jurnal de acces"}}},
  };
  const std::string lang = bundles.contains(language) ? language : "en";
  if (resolved) *resolved = lang;
  return bundles.at(lang);
}

SimopacService::SimopacService(Store& store, auth::UserTable users, Clock clock)
    : store_(store), users_(std::move(users)), clock_(std::move(clock)) {}

auth::AuthToken SimopacService::login(const std::string& user, const std::string& password) {
  auto u = users_.verify(user, password);
  if (!u) throw SimopacError(SimopacErrorCode::BadCredentials);
  return sessions_.issue(u->name, u->role, clock_());
}

nlohmann::json SimopacService::get_patient(const std::string& token, std::uint64_t serial,
                                           const std::string& language,
                                           const std::string& peer_address) {
  const auto now = clock_();
  auto session = sessions_.validate(token, now);
  AuditEntry entry{serial, session ? session->principal : std::string(), peer_address, now, ""};
  if (!session) {
    entry.outcome = "denied";
    store_.add_audit(entry);
    throw SimopacError(SimopacErrorCode::Unauthorized);
  }
  if (!store_.get(serial)) {
    entry.outcome = "unknown_patient";
    store_.add_audit(entry);
    throw SimopacError(SimopacErrorCode::UnknownPatient, std::to_string(serial));
  }
  entry.outcome = "granted";
  store_.add_audit(entry);

  auto record = *store_.get(serial);
  std::string lang;
  nlohmann::json labels = record_labels(language, &lang);
  return {{"serial", record.serial},
          {"display_name", record.demographics.display_name},
          {"birth_year", record.demographics.birth_year},
          {"observations", record.observations},
          {"audit", record.audit},
          {"language", lang},
          {"labels", labels}};
}

StoreCounts SimopacService::stats(const std::string& token) {
  auto session = sessions_.validate(token, clock_());
  if (!session) throw SimopacError(SimopacErrorCode::Unauthorized);
  if (session->role != auth::Role::Admin) throw SimopacError(SimopacErrorCode::Forbidden);
  return store_.counts();
}

hl7::Hl7Message SimopacService::handle_hl7(const std::string& text, const std::string& peer_address) {
  const auto now = clock_();
  std::string control_id = "UNKNOWN";
  auto reject = [&] {
    return hl7::build_ack(hl7::AckCode::AE, control_id, hl7::next_control_id(), now);
  };

  hl7::Hl7Message msg;
  try {
    msg = hl7::parse_hl7(text);
  } catch (const hl7::Hl7Error&) {
    return reject();
  }
  if (!msg.control_id().empty() && hl7::is_plain_field(msg.control_id())) control_id = msg.control_id();
  if (msg.message_type() != "ORU^R01") return reject();

  const auto* pid = msg.find("PID");
  if (pid == nullptr) return reject();
  auto serial = parse_serial(field(*pid, 3));
  if (!serial) return reject();

  std::int64_t window_start = 0;
  std::int64_t window_end = 0;
  if (const auto* obr = msg.find("OBR")) {
    try {
      if (!field(*obr, 7).empty()) window_start = hl7::parse_ts(field(*obr, 7));
      if (!field(*obr, 8).empty()) window_end = hl7::parse_ts(field(*obr, 8));
    } catch (const hl7::Hl7Error&) {
      return reject();
    }
  }

  std::vector<Observation> observations;
  for (const auto* obx : msg.find_all("OBX")) {
    const std::string& id = field(*obx, 3);
    auto caret = id.find('^');
    auto value = parse_double(field(*obx, 5));
    if (caret == std::string::npos || caret == 0 || !value) return reject();
    Observation o;
    o.kind = id.substr(0, caret);
    o.statistic = id.substr(caret + 1);
    o.value = *value;
    o.units = field(*obx, 6);
    o.window_start = window_start;
    o.window_end = window_end;
    o.received_at = now;
    o.source_address = peer_address;
    o.control_id = control_id;
    observations.push_back(std::move(o));
  }
  store_.add_observations(*serial, observations);
  return hl7::build_ack(hl7::AckCode::AA, control_id, hl7::next_control_id(), now);
}

// ---- Server ----

namespace {

bool is_last_line(const std::filesystem::path& path, std::uintmax_t offset) {
  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(offset));
  std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto nl = rest.find('\n');
  return nl == std::string::npos || nl + 1 == rest.size();
}

}  // namespace

SimopacServer::SimopacServer(ServerOptions options, auth::UserTable users,
                             const std::map<std::uint64_t, Demographics>& patients, Clock clock)
    : store_(options.data_dir / "simopac.log", clock), service_(store_, std::move(users), clock) {
  for (const auto& [serial, demo] : patients) store_.preload(serial, demo);
  try {
    store_.restore();
  } catch (const SimopacError& e) {
    // Only a torn final line (a write cut short by a crash) is dropped; damage
    // further up means the log can't be trusted and startup fails.
    if (e.code() != SimopacErrorCode::CorruptLogLine || !is_last_line(store_.log_path(), e.valid_bytes())) throw;
    dropped_line_ = e.line();
    store_.truncate_log(e.valid_bytes());
  }

  mllp_ = std::make_unique<net::TcpServer>(
      options.host, options.mllp_port,
      [this](net::TcpStream& s, const std::atomic<bool>& stopping) { handle_mllp(s, stopping); });

  http_ = std::make_unique<httplib::Server>();
  http_->set_socket_options(net::set_listener_options);
  auto json_reply = [](httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };

  http_->Get("/health", [json_reply](const httplib::Request&, httplib::Response& res) {
    json_reply(res, 200, {{"status", "ok"}});
  });

  http_->Post("/login", [this, json_reply](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
      auto token = service_.login(body.at("user").get<std::string>(),
                                  body.at("password").get<std::string>());
      json_reply(res, 200,
                 {{"token", token.token}, {"expiry", token.expiry}, {"role", auth::to_string(token.role)}});
    } catch (const SimopacError& e) {
      json_reply(res, 401, error_body(e.code()));
    } catch (const std::exception&) {
      json_reply(res, 400, {{"error", "BadRequest"}});
    }
  });

  http_->Get(R"(/patients/([^/]+))", [this, json_reply](const httplib::Request& req,
                                                         httplib::Response& res) {
    const std::string token = auth::bearer_token(req.get_header_value("Authorization"));
    auto serial = parse_serial(req.matches[1]);
    try {
      // Token check happens inside get_patient before existence is revealed;
      // an unparseable serial is looked up as 0 (never a patient).
      auto body = service_.get_patient(token, serial.value_or(0), req.get_param_value("lang"),
                                       req.remote_addr);
      json_reply(res, 200, body);
    } catch (const SimopacError& e) {
      json_reply(res, e.code() == SimopacErrorCode::Unauthorized ? 401 : 404, error_body(e.code()));
    }
  });

  http_->Get("/stats", [this, json_reply](const httplib::Request& req, httplib::Response& res) {
    try {
      auto c = service_.stats(auth::bearer_token(req.get_header_value("Authorization")));
      json_reply(res, 200,
                 {{"records", c.records}, {"observations", c.observations}, {"audits", c.audits}});
    } catch (const SimopacError& e) {
      json_reply(res, e.code() == SimopacErrorCode::Forbidden ? 403 : 401, error_body(e.code()));
    }
  });

  if (options.http_port == 0) {
    int port = http_->bind_to_any_port(options.host);
    if (port < 0) throw net::NetError(net::NetErrorCode::Io, "http bind failed");
    http_port_ = static_cast<std::uint16_t>(port);
  } else {
    if (!http_->bind_to_port(options.host, options.http_port)) {
      mllp_->stop();
      throw net::NetError(net::NetErrorCode::PortInUse, std::to_string(options.http_port));
    }
    http_port_ = options.http_port;
  }
  http_thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
}

SimopacServer::~SimopacServer() { stop(); }

void SimopacServer::stop() {
  if (stopped_) return;
  stopped_ = true;
  http_->stop();
  if (http_thread_.joinable()) http_thread_.join();
  mllp_->stop();
}

void SimopacServer::handle_mllp(net::TcpStream& stream, const std::atomic<bool>& stopping) {
  hl7::MllpReader reader;
  std::uint8_t buf[4096];
  while (!stopping) {
    std::size_t n;
    try {
      n = stream.read_some(buf, sizeof(buf), net::Millis(100));
    } catch (const net::NetError& e) {
      if (e.code() == net::NetErrorCode::Timeout) continue;
      return;
    }
    if (n == 0) return;
    reader.feed(ByteView(buf, n));
    try {
      while (auto text = reader.next()) {
        auto ack = service_.handle_hl7(*text, stream.peer_address());
        stream.write_all(hl7::mllp_wrap(hl7::encode_hl7(ack)));
      }
    } catch (const hl7::Hl7Error&) {
      auto ack = hl7::build_ack(hl7::AckCode::AE, "UNKNOWN", hl7::next_control_id(), system_now());
      try {
        stream.write_all(hl7::mllp_wrap(hl7::encode_hl7(ack)));
      } catch (const net::NetError&) {
      }
      return;
    }
  }
}

}  // namespace cipdev::simopac
