#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cipdev/auth.hpp"
#include "cipdev/device.hpp"
#include "cipdev/hl7.hpp"
#include "cipdev/simopac.hpp"
#include "cipdev/vitals.hpp"

namespace cipdev {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::filesystem::path& path, const std::string& cause);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

// Sections: device, reader, vitals, thresholds, simopac, users. All optional;
// missing values take the defaults below.
struct AppConfig {
  struct Device {
    std::string host = "0.0.0.0";
    std::uint16_t port = 4500;
    std::filesystem::path ui_dir;
    std::size_t window_size = 10;
    int poll_ms = 200;
    hl7::RetryPolicy retry;
  } device;
  Endpoint reader{"127.0.0.1", 4501};
  Endpoint vitals{"127.0.0.1", 4502};
  vitals::Thresholds thresholds = vitals::Thresholds::defaults();
  struct Simopac {
    std::string host = "127.0.0.1";
    std::uint16_t mllp_port = 4503;
    std::uint16_t http_port = 4504;
    std::filesystem::path data_dir = "simopac-data";
    nlohmann::json users = nlohmann::json::array();
    std::map<std::uint64_t, simopac::Demographics> patients;
    std::string client_user;
    std::string client_password;
  } simopac;
  nlohmann::json users = nlohmann::json::array();  // device user table
};

// Relative paths inside the file resolve against the file's directory.
AppConfig load_config(const std::filesystem::path& path);
AppConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

device::DeviceOptions device_options(const AppConfig& cfg, bool deterministic);

}  // namespace cipdev
