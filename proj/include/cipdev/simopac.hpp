#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cipdev/auth.hpp"
#include "cipdev/clock.hpp"
#include "cipdev/hl7.hpp"
#include "cipdev/net.hpp"

namespace httplib {
class Server;
}

namespace cipdev::simopac {

// One stored OBX value.
struct Observation {
  std::string kind;
  std::string statistic;
  double value = 0;
  std::string units;
  std::int64_t window_start = 0;
  std::int64_t window_end = 0;
  std::int64_t received_at = 0;
  std::string source_address;
  std::string control_id;

  bool operator==(const Observation&) const = default;
};

struct AuditEntry {
  std::uint64_t serial = 0;
  std::string requester;
  std::string address;
  std::int64_t timestamp = 0;
  std::string outcome;  // granted | denied | unknown_patient

  bool operator==(const AuditEntry&) const = default;
};

struct Demographics {
  std::string display_name;
  int birth_year = 0;

  bool operator==(const Demographics&) const = default;
};

struct EhrRecord {
  std::uint64_t serial = 0;
  Demographics demographics;
  std::vector<Observation> observations;
  std::vector<AuditEntry> audit;

  bool operator==(const EhrRecord&) const = default;
};

void to_json(nlohmann::json& j, const Observation& o);
void from_json(const nlohmann::json& j, Observation& o);
void to_json(nlohmann::json& j, const AuditEntry& a);
void from_json(const nlohmann::json& j, AuditEntry& a);

enum class SimopacErrorCode { BadCredentials, Unauthorized, Forbidden, UnknownPatient, CorruptLogLine, Io };

const char* to_string(SimopacErrorCode code);

class SimopacError : public std::runtime_error {
 public:
  SimopacError(SimopacErrorCode code, const std::string& detail = {}, std::size_t line = 0,
               std::uintmax_t valid_bytes = 0);
  SimopacErrorCode code() const { return code_; }
  // For CorruptLogLine: 1-based line number and the byte length of the good prefix.
  std::size_t line() const { return line_; }
  std::uintmax_t valid_bytes() const { return valid_bytes_; }

 private:
  SimopacErrorCode code_;
  std::size_t line_;
  std::uintmax_t valid_bytes_;
};

struct StoreCounts {
  std::size_t records = 0;
  std::size_t observations = 0;
  std::size_t audits = 0;
  bool operator==(const StoreCounts&) const = default;
};

// Patient records plus a global audit trail. Every mutation is appended to the
// log as {"type", "payload", "ts"} before it is applied in memory.
class Store {
 public:
  // Empty path keeps the store in memory only.
  explicit Store(std::filesystem::path log_path = {}, Clock clock = system_now);

  // Demographics come from config and are not logged.
  void preload(std::uint64_t serial, Demographics demographics);

  // Replays the log. On a corrupt line, throws CorruptLogLine with everything
  // before it already applied.
  std::size_t restore();
  // Truncates the log to `bytes`, dropping a torn tail.
  void truncate_log(std::uintmax_t bytes);

  void add_observations(std::uint64_t serial, const std::vector<Observation>& observations);
  void add_audit(const AuditEntry& entry);

  std::optional<EhrRecord> get(std::uint64_t serial) const;
  StoreCounts counts() const;
  const std::filesystem::path& log_path() const { return log_path_; }

 private:
  void append(const std::string& type, const nlohmann::json& payload);
  void apply(const std::string& type, const nlohmann::json& payload);

  mutable std::mutex mu_;
  std::filesystem::path log_path_;
  Clock clock_;
  std::ofstream log_;
  std::map<std::uint64_t, EhrRecord> records_;
  std::size_t audits_ = 0;
};

// Transport-independent server behaviour.
class SimopacService {
 public:
  SimopacService(Store& store, auth::UserTable users, Clock clock = system_now);

  auth::AuthToken login(const std::string& user, const std::string& password);

  // Audits every call. Token is checked before the record is looked up, so
  // unauthorized callers never learn whether a serial exists.
  nlohmann::json get_patient(const std::string& token, std::uint64_t serial,
                             const std::string& language, const std::string& peer_address);

  // Admin only; does not audit.
  StoreCounts stats(const std::string& token);

  // ORU^R01 in, ACK out (AA on stored, AE on anything malformed).
  hl7::Hl7Message handle_hl7(const std::string& text, const std::string& peer_address);

 private:
  Store& store_;
  auth::UserTable users_;
  auth::SessionStore sessions_;
  Clock clock_;
};

// Display labels for the record projection; unknown languages fall back to "en".
nlohmann::json record_labels(const std::string& language, std::string* resolved = nullptr);

struct ServerOptions {
  std::string host = "0.0.0.0";
  std::uint16_t mllp_port = 4503;
  std::uint16_t http_port = 4504;
  std::filesystem::path data_dir = ".";
};

class SimopacServer {
 public:
  // Restores data_dir/simopac.log; a torn tail is truncated away.
  SimopacServer(ServerOptions options, auth::UserTable users,
                const std::map<std::uint64_t, Demographics>& patients, Clock clock = system_now);
  ~SimopacServer();

  std::uint16_t mllp_port() const { return mllp_->port(); }
  std::uint16_t http_port() const { return http_port_; }
  Store& store() { return store_; }
  SimopacService& service() { return service_; }
  // Line number of a corrupt log line found on startup, 0 if none.
  std::size_t dropped_corrupt_line() const { return dropped_line_; }
  void stop();

 private:
  void handle_mllp(net::TcpStream& stream, const std::atomic<bool>& stopping);

  Store store_;
  SimopacService service_;
  std::size_t dropped_line_ = 0;
  std::unique_ptr<net::TcpServer> mllp_;
  std::unique_ptr<httplib::Server> http_;
  std::uint16_t http_port_ = 0;
  std::thread http_thread_;
  bool stopped_ = false;
};

}  // namespace cipdev::simopac
