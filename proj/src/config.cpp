#include "cipdev/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace cipdev {
namespace {

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

Endpoint endpoint(const nlohmann::json& j, Endpoint def) {
  if (!j.is_object()) return def;
  def.host = j.value("host", def.host);
  def.port = j.value("port", def.port);
  return def;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.empty() || path.is_absolute() || base.empty()) return path;
  return base / path;
}

}  // namespace

ConfigError::ConfigError(const std::filesystem::path& path, const std::string& cause)
    : std::runtime_error("BadConfig(" + path.string() + "): " + cause), path_(path) {}

AppConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  AppConfig c;
  if (!j.is_object()) throw std::invalid_argument("top level must be an object");

  if (j.contains("device")) {
    const auto& d = j["device"];
    c.device.host = d.value("host", c.device.host);
    c.device.port = d.value("port", c.device.port);
    if (d.contains("ui_dir")) c.device.ui_dir = resolve(base_dir, d["ui_dir"].get<std::string>());
    c.device.window_size = d.value("window_size", c.device.window_size);
    c.device.poll_ms = d.value("poll_ms", c.device.poll_ms);
    if (d.contains("retry")) {
      const auto& r = d["retry"];
      c.device.retry.attempts = r.value("attempts", c.device.retry.attempts);
      c.device.retry.backoff_ms = r.value("backoff_ms", c.device.retry.backoff_ms);
      c.device.retry.ack_timeout_ms = r.value("ack_timeout_ms", c.device.retry.ack_timeout_ms);
      c.device.retry.connect_timeout_ms = r.value("connect_timeout_ms", c.device.retry.connect_timeout_ms);
    }
  }
  if (j.contains("reader")) c.reader = endpoint(j["reader"], c.reader);
  if (j.contains("vitals")) c.vitals = endpoint(j["vitals"], c.vitals);
  if (j.contains("thresholds")) c.thresholds = vitals::Thresholds::from_json(j["thresholds"]);
  if (j.contains("simopac")) {
    const auto& s = j["simopac"];
    c.simopac.host = s.value("host", c.simopac.host);
    c.simopac.mllp_port = s.value("mllp_port", c.simopac.mllp_port);
    c.simopac.http_port = s.value("http_port", c.simopac.http_port);
    if (s.contains("data_dir")) c.simopac.data_dir = resolve(base_dir, s["data_dir"].get<std::string>());
    if (s.contains("users")) c.simopac.users = s["users"];
    for (const auto& p : s.value("patients", nlohmann::json::array())) {
      c.simopac.patients[p.at("serial").get<std::uint64_t>()] =
          simopac::Demographics{p.value("display_name", std::string()), p.value("birth_year", 0)};
    }
    if (s.contains("client")) {
      c.simopac.client_user = s["client"].value("user", std::string());
      c.simopac.client_password = s["client"].value("password", std::string());
    }
  }
  if (j.contains("users")) c.users = j["users"];
  // Validate user tables eagerly so a bad entry is a config error.
  auth::UserTable::from_json(c.users);
  auth::UserTable::from_json(c.simopac.users);
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot read file");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path, "line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  try {
    return parse_config(j, path.parent_path());
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

device::DeviceOptions device_options(const AppConfig& cfg, bool deterministic) {
  device::DeviceOptions opt;
  opt.mode = deterministic ? agents::Runtime::Mode::Deterministic : agents::Runtime::Mode::Threaded;
  opt.thresholds = cfg.thresholds;
  opt.window_size = cfg.device.window_size;
  opt.hl7_endpoint = {cfg.simopac.host, cfg.simopac.mllp_port};
  opt.retry = cfg.device.retry;
  opt.simopac_user = cfg.simopac.client_user;
  opt.simopac_password = cfg.simopac.client_password;
  opt.poll_interval = std::chrono::milliseconds(cfg.device.poll_ms);
  return opt;
}

}  // namespace cipdev
