#pragma once

// The device's four agents (patient, biometric, physician, SIMOPAC) on an
// in-process bus.
//
// Wiring:
//   patient   --PatientIdentified-->      physician (+ biometric subscribes)
//   patient   --CardUpdated-->            physician
//   biometric --Alarm / ResultsAvailable--> physician
//   physician --TestResult / SupplementaryRequest--> simopac
//   simopac   --SupplementaryResponse-->  physician

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cipdev/cip.hpp"
#include "cipdev/clock.hpp"
#include "cipdev/hl7.hpp"
#include "cipdev/rfid.hpp"
#include "cipdev/vitals.hpp"

namespace cipdev::agents {

enum class AgentId { Patient, Biometric, Physician, Simopac };
const char* to_string(AgentId id);

enum class EnvelopeKind {
  PatientIdentified,
  ResultsAvailable,
  TestResult,
  Alarm,
  SupplementaryRequest,
  SupplementaryResponse,
  CardUpdated,
};
const char* to_string(EnvelopeKind kind);

struct AlarmEvent {
  std::uint64_t id = 0;
  std::uint64_t serial = 0;
  vitals::VitalSample sample;
  vitals::Classification classification = vitals::Classification::AbnormalHigh;
  bool acknowledged = false;
  std::optional<std::string> acknowledged_by;

  bool operator==(const AlarmEvent&) const = default;
};

struct PatientIdentified {
  std::uint64_t uid = 0;
  CipCard card;
};
struct ResultsAvailable {
  vitals::BiometricResult result;
};
struct TestResult {
  vitals::BiometricResult result;
};
struct SupplementaryRequest {
  std::uint64_t request_id = 0;
  std::uint64_t serial = 0;
  std::string server_uri;
  std::string language;
};
struct SupplementaryResponse {
  std::uint64_t request_id = 0;
  std::uint64_t serial = 0;
  bool ok = false;
  std::string cause;  // ServerUnreachable | Unauthorized | UnknownPatient | NoCurrentPatient
  nlohmann::json record;
};
struct CardUpdated {
  CipCard card;
};

// Kind is a function of the payload alternative, so the two can't disagree.
using Payload = std::variant<PatientIdentified, ResultsAvailable, TestResult, AlarmEvent,
                             SupplementaryRequest, SupplementaryResponse, CardUpdated>;

struct Envelope {
  std::uint64_t id = 0;
  AgentId from = AgentId::Patient;
  AgentId to = AgentId::Physician;
  Payload payload;
  std::int64_t timestamp = 0;

  EnvelopeKind kind() const;
};

enum class AgentErrorCode {
  UnknownAgent,
  BusClosed,
  InvalidEnvelope,
  UnknownAlarmId,
  AlreadyAcknowledged,
  NoCurrentPatient,
  TagWriteFailed,
  InvalidPatch,
  StalePatient,
  Timeout,
};
const char* to_string(AgentErrorCode code);

class AgentError : public std::runtime_error {
 public:
  AgentError(AgentErrorCode code, const std::string& detail = {});
  AgentErrorCode code() const { return code_; }

 private:
  AgentErrorCode code_;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual void on_envelope(const Envelope& envelope) = 0;
};

// Bus plus scheduler. Each agent has a private mailbox holding envelopes and
// posted tasks; an agent never runs concurrently with itself.
//
// Threaded: one worker per agent.
// Deterministic: items run one at a time in global enqueue order, either via
// step()/run_until_idle() or on a single driver thread after start().
class Runtime {
 public:
  enum class Mode { Threaded, Deterministic };
  using Task = std::function<void()>;
  using Tap = std::function<void(const Envelope&)>;

  explicit Runtime(Mode mode, Clock clock = system_now);
  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  void add_agent(AgentId id, Agent& agent);
  void subscribe(AgentId id, std::initializer_list<EnvelopeKind> kinds);
  // Sees every envelope at send time, under the bus lock. Must not call back
  // into the runtime.
  void add_tap(Tap tap);

  // Delivers to every subscriber of the kind. Returns the envelope id.
  std::uint64_t send(AgentId from, AgentId to, Payload payload);
  void post(AgentId id, Task task);

  bool step();
  std::size_t run_until_idle(std::size_t max_steps = 1'000'000);

  void start();
  // Closes the bus (later sends throw BusClosed) and joins workers.
  void stop();

  bool idle() const;
  bool wait_idle(std::chrono::milliseconds timeout) const;
  Mode mode() const { return mode_; }
  Clock& clock() { return clock_; }

 private:
  struct Item {
    std::uint64_t seq;
    std::variant<Envelope, Task> body;
  };
  struct Slot {
    Agent* agent = nullptr;
    std::deque<Item> mailbox;
    std::set<EnvelopeKind> kinds;
  };

  void enqueue_locked(AgentId id, std::variant<Envelope, Task> body);
  void dispatch(AgentId id, Item& item);
  void worker(AgentId id);
  void driver();

  Mode mode_;
  Clock clock_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable std::condition_variable idle_cv_;
  std::mutex step_mu_;
  std::map<AgentId, Slot> slots_;
  std::vector<Tap> taps_;
  std::uint64_t next_envelope_id_ = 1;
  std::uint64_t next_seq_ = 1;
  std::size_t in_flight_ = 0;
  bool closed_ = false;
  bool running_ = false;
  std::vector<std::thread> threads_;
};

struct DeviceEvent {
  std::uint64_t seq = 0;
  std::string type;
  nlohmann::json data;
  std::int64_t timestamp = 0;
};

// The single guarded owner of device state shared between agents and the API.
class DeviceState {
 public:
  explicit DeviceState(Clock clock = system_now, std::size_t sample_history = 1000);

  std::optional<CipCard> current_patient() const;
  std::optional<std::uint64_t> current_uid() const;
  // Replaces the patient; clears latest results.
  void set_current_patient(std::uint64_t uid, const CipCard& card);
  void update_card(const CipCard& card);

  std::uint64_t next_alarm_id();
  void append_alarm(const AlarmEvent& alarm);
  AlarmEvent acknowledge_alarm(std::uint64_t id, const std::string& identity);
  std::vector<AlarmEvent> alarms() const;

  void store_result(const vitals::BiometricResult& result);
  std::map<vitals::Kind, vitals::BiometricResult> latest_results() const;

  void record_sample(const vitals::VitalSample& sample);
  std::vector<vitals::VitalSample> recent_samples(vitals::Kind kind, std::size_t limit) const;

  void cache_supplementary(const SupplementaryResponse& response);
  std::optional<SupplementaryResponse> supplementary(std::uint64_t serial) const;

  // Pending API waits for a supplementary response.
  std::pair<std::uint64_t, std::future<SupplementaryResponse>> register_supplementary_wait();
  void fulfill_supplementary(const SupplementaryResponse& response);

  std::uint64_t push_event(const std::string& type, nlohmann::json data);
  std::vector<DeviceEvent> events_since(std::uint64_t after_seq) const;
  // Blocks until an event newer than after_seq exists or the timeout passes.
  bool wait_events(std::uint64_t after_seq, std::chrono::milliseconds timeout) const;

  void increment(const std::string& counter, std::uint64_t by = 1);
  std::map<std::string, std::uint64_t> counters() const;

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable events_cv_;
  Clock clock_;
  std::size_t sample_history_;
  std::optional<CipCard> patient_;
  std::optional<std::uint64_t> uid_;
  std::vector<AlarmEvent> alarms_;
  std::uint64_t next_alarm_id_ = 1;
  std::map<vitals::Kind, vitals::BiometricResult> latest_;
  std::map<vitals::Kind, std::deque<vitals::VitalSample>> samples_;
  std::map<std::uint64_t, SupplementaryResponse> supplementary_;
  std::uint64_t next_request_id_ = 1;
  std::map<std::uint64_t, std::promise<SupplementaryResponse>> waiters_;
  std::vector<DeviceEvent> events_;
  std::map<std::string, std::uint64_t> counters_;
};

// Fetches the supplementary record from the server named on the card.
class RecordFetcher {
 public:
  virtual ~RecordFetcher() = default;
  virtual SupplementaryResponse fetch(const SupplementaryRequest& request) = 0;
};

// ---- the four agents ----

class PatientAgent : public Agent {
 public:
  PatientAgent(Runtime& runtime, DeviceState& state, rfid::TagReader& reader);

  void on_envelope(const Envelope&) override {}

  // Reads and decodes the card on `uid`. Failure becomes an
  // identification_failed device event, not an envelope.
  void on_tag(std::uint64_t uid);

  // apply_update -> write -> re-read and compare. State changes only after the
  // re-read matches; on failure the previous image is written back best-effort.
  CipCard write_card(const CipPatch& patch, const std::string& principal);

 private:
  Runtime& runtime_;
  DeviceState& state_;
  rfid::TagReader& reader_;
};

class BiometricAgent : public Agent {
 public:
  BiometricAgent(Runtime& runtime, DeviceState& state, vitals::Thresholds thresholds,
                 std::size_t window_size);

  void on_envelope(const Envelope& envelope) override;
  // Alarm goes out before the sample joins the window.
  void on_sample(const vitals::VitalSample& sample);

 private:
  Runtime& runtime_;
  DeviceState& state_;
  vitals::Thresholds thresholds_;
  vitals::WindowAccumulator window_;
};

class PhysicianAgent : public Agent {
 public:
  PhysicianAgent(Runtime& runtime, DeviceState& state);

  void on_envelope(const Envelope& envelope) override;
  // Starts a supplementary query for the current patient.
  void request_supplementary(std::uint64_t request_id);

 private:
  Runtime& runtime_;
  DeviceState& state_;
};

struct DeliveryOutcome {
  enum class Status { Delivered, AckNegative, Timeout, Failed } status = Status::Failed;
  int attempts = 0;
  std::string detail;
};
const char* to_string(DeliveryOutcome::Status status);

class SimopacAgent : public Agent {
 public:
  SimopacAgent(Runtime& runtime, DeviceState& state, hl7::Endpoint endpoint,
               hl7::RetryPolicy retry, RecordFetcher& fetcher);

  void on_envelope(const Envelope& envelope) override;
  DeliveryOutcome deliver(const vitals::BiometricResult& result);

 private:
  Runtime& runtime_;
  DeviceState& state_;
  hl7::Endpoint endpoint_;
  hl7::RetryPolicy retry_;
  RecordFetcher& fetcher_;
};

void to_json(nlohmann::json& j, const AlarmEvent& a);
void to_json(nlohmann::json& j, const SupplementaryResponse& r);

}  // namespace cipdev::agents
