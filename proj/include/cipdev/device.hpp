#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <future>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include "cipdev/agents.hpp"
#include "cipdev/auth.hpp"
#include "cipdev/hl7.hpp"
#include "cipdev/net.hpp"
#include "cipdev/rfid.hpp"
#include "cipdev/vitals.hpp"

namespace httplib {
class Server;
}

namespace cipdev::device {

struct DeviceOptions {
  agents::Runtime::Mode mode = agents::Runtime::Mode::Threaded;
  vitals::Thresholds thresholds = vitals::Thresholds::defaults();
  std::size_t window_size = 10;
  hl7::Endpoint hl7_endpoint;
  hl7::RetryPolicy retry;
  // Service account the device uses against the SIMOPAC HTTP API.
  std::string simopac_user;
  std::string simopac_password;
  // Reader inventory poll period; zero disables the poll thread.
  std::chrono::milliseconds poll_interval{200};
  Clock clock = system_now;
};

// Supplementary queries over HTTP+JSON to the server named by the card URI,
// logging in with the device service account (cached token, one re-login on 401).
class HttpRecordFetcher : public agents::RecordFetcher {
 public:
  HttpRecordFetcher(std::string user, std::string password,
                    std::chrono::milliseconds timeout = std::chrono::milliseconds(2000));
  agents::SupplementaryResponse fetch(const agents::SupplementaryRequest& request) override;

 private:
  std::string user_;
  std::string password_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  std::map<std::string, std::string> tokens_;  // base url -> token
};

// Splits "http://host:port/prefix/" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_server_uri(const std::string& uri);

// The device: four agents, the shared state, and reader polling.
class Device {
 public:
  Device(DeviceOptions options, rfid::TagReader& reader,
         std::unique_ptr<agents::RecordFetcher> fetcher = nullptr);
  ~Device();
  Device(const Device&) = delete;
  Device& operator=(const Device&) = delete;

  void start();
  void stop();

  agents::Runtime& runtime() { return runtime_; }
  agents::DeviceState& state() { return state_; }
  agents::SimopacAgent& simopac_agent() { return simopac_; }
  const DeviceOptions& options() const { return options_; }

  // Posts on_tag for every uid that was not in the previous inventory.
  void poll_reader_once();

  void submit_sample(const vitals::VitalSample& sample);
  // Parse errors are counted, not thrown.
  void submit_vital_line(const std::string& line);

  std::future<CipCard> update_card(CipPatch patch, std::string principal);
  std::future<agents::SupplementaryResponse> request_supplementary();
  agents::AlarmEvent acknowledge_alarm(std::uint64_t id, const std::string& identity);

 private:
  void poll_loop();

  DeviceOptions options_;
  rfid::TagReader& reader_;
  agents::DeviceState state_;
  agents::Runtime runtime_;
  std::unique_ptr<agents::RecordFetcher> fetcher_;
  agents::PatientAgent patient_;
  agents::BiometricAgent biometric_;
  agents::PhysicianAgent physician_;
  agents::SimopacAgent simopac_;

  std::mutex poll_mu_;
  std::set<std::uint64_t> seen_;
  std::condition_variable poll_cv_;
  bool stopping_ = false;
  std::thread poll_thread_;
};

// Line-protocol ingestion for medical-device streams.
class VitalsListener {
 public:
  VitalsListener(Device& device, const std::string& host, std::uint16_t port);
  std::uint16_t port() const { return server_.port(); }
  void stop() { server_.stop(); }

 private:
  Device& device_;
  net::TcpServer server_;
};

struct ApiRoute {
  std::string method;
  std::string path;  // example path for parameterized routes
  bool requires_session;
};

// Every route the device serves.
const std::vector<ApiRoute>& api_routes();

// The device's mini web server.
class DeviceApi {
 public:
  DeviceApi(Device& device, auth::UserTable users, const std::string& host, std::uint16_t port,
            std::filesystem::path ui_dir = {},
            std::chrono::milliseconds command_timeout = std::chrono::milliseconds(15000));
  ~DeviceApi();

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  Device& device_;
  auth::UserTable users_;
  auth::SessionStore sessions_;
  std::chrono::milliseconds command_timeout_;
  std::unique_ptr<httplib::Server> http_;
  std::uint16_t port_ = 0;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
};

}  // namespace cipdev::device
