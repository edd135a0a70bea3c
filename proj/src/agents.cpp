#include "cipdev/agents.hpp"

#include <algorithm>
#include <iostream>

namespace cipdev::agents {

const char* to_string(AgentId id) {
  switch (id) {
    case AgentId::Patient: return "patient";
    case AgentId::Biometric: return "biometric";
    case AgentId::Physician: return "physician";
    case AgentId::Simopac: return "simopac";
  }
  return "?";
}

const char* to_string(EnvelopeKind kind) {
  switch (kind) {
    case EnvelopeKind::PatientIdentified: return "PatientIdentified";
    case EnvelopeKind::ResultsAvailable: return "ResultsAvailable";
    case EnvelopeKind::TestResult: return "TestResult";
    case EnvelopeKind::Alarm: return "Alarm";
    case EnvelopeKind::SupplementaryRequest: return "SupplementaryRequest";
    case EnvelopeKind::SupplementaryResponse: return "SupplementaryResponse";
    case EnvelopeKind::CardUpdated: return "CardUpdated";
  }
  return "?";
}

EnvelopeKind Envelope::kind() const {
  struct Visitor {
    EnvelopeKind operator()(const PatientIdentified&) const { return EnvelopeKind::PatientIdentified; }
    EnvelopeKind operator()(const ResultsAvailable&) const { return EnvelopeKind::ResultsAvailable; }
    EnvelopeKind operator()(const TestResult&) const { return EnvelopeKind::TestResult; }
    EnvelopeKind operator()(const AlarmEvent&) const { return EnvelopeKind::Alarm; }
    EnvelopeKind operator()(const SupplementaryRequest&) const { return EnvelopeKind::SupplementaryRequest; }
    EnvelopeKind operator()(const SupplementaryResponse&) const { return EnvelopeKind::SupplementaryResponse; }
    EnvelopeKind operator()(const CardUpdated&) const { return EnvelopeKind::CardUpdated; }
  };
  return std::visit(Visitor{}, payload);
}

const char* to_string(AgentErrorCode code) {
  switch (code) {
    case AgentErrorCode::UnknownAgent: return "UnknownAgent";
    case AgentErrorCode::BusClosed: return "BusClosed";
    case AgentErrorCode::InvalidEnvelope: return "InvalidEnvelope";
    case AgentErrorCode::UnknownAlarmId: return "UnknownAlarmId";
    case AgentErrorCode::AlreadyAcknowledged: return "AlreadyAcknowledged";
    case AgentErrorCode::NoCurrentPatient: return "NoCurrentPatient";
    case AgentErrorCode::TagWriteFailed: return "TagWriteFailed";
    case AgentErrorCode::InvalidPatch: return "InvalidPatch";
    case AgentErrorCode::StalePatient: return "StalePatient";
    case AgentErrorCode::Timeout: return "Timeout";
  }
  return "Unknown";
}

AgentError::AgentError(AgentErrorCode code, const std::string& detail)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code) {}

// ---- Runtime ----

Runtime::Runtime(Mode mode, Clock clock) : mode_(mode), clock_(std::move(clock)) {}

Runtime::~Runtime() { stop(); }

void Runtime::add_agent(AgentId id, Agent& agent) {
  std::lock_guard lk(mu_);
  slots_[id].agent = &agent;
}

void Runtime::subscribe(AgentId id, std::initializer_list<EnvelopeKind> kinds) {
  std::lock_guard lk(mu_);
  auto it = slots_.find(id);
  if (it == slots_.end()) throw AgentError(AgentErrorCode::UnknownAgent, to_string(id));
  it->second.kinds.insert(kinds.begin(), kinds.end());
}

void Runtime::add_tap(Tap tap) {
  std::lock_guard lk(mu_);
  taps_.push_back(std::move(tap));
}

std::uint64_t Runtime::send(AgentId from, AgentId to, Payload payload) {
  std::lock_guard lk(mu_);
  if (closed_) throw AgentError(AgentErrorCode::BusClosed);
  if (from == to) throw AgentError(AgentErrorCode::InvalidEnvelope, "from == to");
  if (!slots_.count(from)) throw AgentError(AgentErrorCode::UnknownAgent, to_string(from));
  if (!slots_.count(to)) throw AgentError(AgentErrorCode::UnknownAgent, to_string(to));

  Envelope env{next_envelope_id_++, from, to, std::move(payload), clock_()};
  const auto kind = env.kind();
  for (auto& [id, slot] : slots_) {
    if (id == from) continue;
    if (id == to || slot.kinds.count(kind)) enqueue_locked(id, env);
  }
  for (const auto& tap : taps_) tap(env);
  cv_.notify_all();
  return env.id;
}

void Runtime::post(AgentId id, Task task) {
  std::lock_guard lk(mu_);
  if (closed_) throw AgentError(AgentErrorCode::BusClosed);
  if (!slots_.count(id)) throw AgentError(AgentErrorCode::UnknownAgent, to_string(id));
  enqueue_locked(id, std::move(task));
  cv_.notify_all();
}

void Runtime::enqueue_locked(AgentId id, std::variant<Envelope, Task> body) {
  slots_[id].mailbox.push_back(Item{next_seq_++, std::move(body)});
  ++in_flight_;
}

void Runtime::dispatch(AgentId id, Item& item) {
  Agent* agent = nullptr;
  {
    std::lock_guard lk(mu_);
    agent = slots_[id].agent;
  }
  try {
    if (auto* env = std::get_if<Envelope>(&item.body)) {
      if (agent) agent->on_envelope(*env);
    } else {
      std::get<Task>(item.body)();
    }
  } catch (const std::exception& e) {
    std::cerr << "agent " << to_string(id) << ": " << e.what() << "\n";
  }
  std::lock_guard lk(mu_);
  --in_flight_;
  idle_cv_.notify_all();
}

bool Runtime::step() {
  std::lock_guard step_lk(step_mu_);
  AgentId id{};
  Item item{0, Task{}};
  {
    std::lock_guard lk(mu_);
    Slot* best = nullptr;
    for (auto& [slot_id, slot] : slots_) {
      if (slot.mailbox.empty()) continue;
      if (!best || slot.mailbox.front().seq < best->mailbox.front().seq) {
        best = &slot;
        id = slot_id;
      }
    }
    if (!best) return false;
    item = std::move(best->mailbox.front());
    best->mailbox.pop_front();
  }
  dispatch(id, item);
  return true;
}

std::size_t Runtime::run_until_idle(std::size_t max_steps) {
  std::size_t steps = 0;
  while (steps < max_steps && step()) ++steps;
  return steps;
}

void Runtime::start() {
  std::lock_guard lk(mu_);
  if (running_ || closed_) return;
  running_ = true;
  if (mode_ == Mode::Deterministic) {
    threads_.emplace_back([this] { driver(); });
  } else {
    for (auto& [id, _] : slots_) {
      AgentId agent = id;
      threads_.emplace_back([this, agent] { worker(agent); });
    }
  }
}

void Runtime::driver() {
  while (true) {
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [this] {
        if (closed_) return true;
        return std::any_of(slots_.begin(), slots_.end(),
                           [](const auto& s) { return !s.second.mailbox.empty(); });
      });
      if (closed_) return;
    }
    step();
  }
}

void Runtime::worker(AgentId id) {
  while (true) {
    Item item{0, Task{}};
    {
      std::unique_lock lk(mu_);
      auto& slot = slots_[id];
      cv_.wait(lk, [&] { return closed_ || !slot.mailbox.empty(); });
      if (closed_) return;
      item = std::move(slot.mailbox.front());
      slot.mailbox.pop_front();
    }
    dispatch(id, item);
  }
}

void Runtime::stop() {
  {
    std::lock_guard lk(mu_);
    closed_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

bool Runtime::idle() const {
  std::lock_guard lk(mu_);
  return in_flight_ == 0;
}

bool Runtime::wait_idle(std::chrono::milliseconds timeout) const {
  std::unique_lock lk(mu_);
  return idle_cv_.wait_for(lk, timeout, [this] { return in_flight_ == 0; });
}

// ---- DeviceState ----

DeviceState::DeviceState(Clock clock, std::size_t sample_history)
    : clock_(std::move(clock)), sample_history_(sample_history) {}

std::optional<CipCard> DeviceState::current_patient() const {
  std::lock_guard lk(mu_);
  return patient_;
}

std::optional<std::uint64_t> DeviceState::current_uid() const {
  std::lock_guard lk(mu_);
  return uid_;
}

void DeviceState::set_current_patient(std::uint64_t uid, const CipCard& card) {
  std::lock_guard lk(mu_);
  patient_ = card;
  uid_ = uid;
  latest_.clear();
}

void DeviceState::update_card(const CipCard& card) {
  std::lock_guard lk(mu_);
  patient_ = card;
}

std::uint64_t DeviceState::next_alarm_id() {
  std::lock_guard lk(mu_);
  return next_alarm_id_++;
}

void DeviceState::append_alarm(const AlarmEvent& alarm) {
  std::lock_guard lk(mu_);
  auto pos = std::upper_bound(alarms_.begin(), alarms_.end(), alarm.id,
                              [](std::uint64_t id, const AlarmEvent& a) { return id < a.id; });
  alarms_.insert(pos, alarm);
}

AlarmEvent DeviceState::acknowledge_alarm(std::uint64_t id, const std::string& identity) {
  std::lock_guard lk(mu_);
  auto it = std::find_if(alarms_.begin(), alarms_.end(), [id](const AlarmEvent& a) { return a.id == id; });
  if (it == alarms_.end()) throw AgentError(AgentErrorCode::UnknownAlarmId, std::to_string(id));
  if (it->acknowledged) throw AgentError(AgentErrorCode::AlreadyAcknowledged, std::to_string(id));
  it->acknowledged = true;
  it->acknowledged_by = identity;
  return *it;
}

std::vector<AlarmEvent> DeviceState::alarms() const {
  std::lock_guard lk(mu_);
  return alarms_;
}

void DeviceState::store_result(const vitals::BiometricResult& result) {
  std::lock_guard lk(mu_);
  latest_[result.kind] = result;
}

std::map<vitals::Kind, vitals::BiometricResult> DeviceState::latest_results() const {
  std::lock_guard lk(mu_);
  return latest_;
}

void DeviceState::record_sample(const vitals::VitalSample& sample) {
  std::lock_guard lk(mu_);
  auto& q = samples_[sample.kind];
  q.push_back(sample);
  while (q.size() > sample_history_) q.pop_front();
}

std::vector<vitals::VitalSample> DeviceState::recent_samples(vitals::Kind kind, std::size_t limit) const {
  std::lock_guard lk(mu_);
  auto it = samples_.find(kind);
  if (it == samples_.end()) return {};
  const auto& q = it->second;
  const std::size_t n = std::min(limit, q.size());
  return std::vector<vitals::VitalSample>(q.end() - static_cast<std::ptrdiff_t>(n), q.end());
}

void DeviceState::cache_supplementary(const SupplementaryResponse& response) {
  std::lock_guard lk(mu_);
  supplementary_[response.serial] = response;
}

std::optional<SupplementaryResponse> DeviceState::supplementary(std::uint64_t serial) const {
  std::lock_guard lk(mu_);
  auto it = supplementary_.find(serial);
  if (it == supplementary_.end()) return std::nullopt;
  return it->second;
}

std::pair<std::uint64_t, std::future<SupplementaryResponse>> DeviceState::register_supplementary_wait() {
  std::lock_guard lk(mu_);
  const auto id = next_request_id_++;
  auto& promise = waiters_[id];
  return {id, promise.get_future()};
}

void DeviceState::fulfill_supplementary(const SupplementaryResponse& response) {
  std::lock_guard lk(mu_);
  auto it = waiters_.find(response.request_id);
  if (it == waiters_.end()) return;
  it->second.set_value(response);
  waiters_.erase(it);
}

std::uint64_t DeviceState::push_event(const std::string& type, nlohmann::json data) {
  std::uint64_t seq;
  {
    std::lock_guard lk(mu_);
    seq = events_.size() + 1;
    events_.push_back({seq, type, std::move(data), clock_()});
  }
  events_cv_.notify_all();
  return seq;
}

std::vector<DeviceEvent> DeviceState::events_since(std::uint64_t after_seq) const {
  std::lock_guard lk(mu_);
  if (after_seq >= events_.size()) return {};
  return std::vector<DeviceEvent>(events_.begin() + static_cast<std::ptrdiff_t>(after_seq), events_.end());
}

bool DeviceState::wait_events(std::uint64_t after_seq, std::chrono::milliseconds timeout) const {
  std::unique_lock lk(mu_);
  return events_cv_.wait_for(lk, timeout, [&] { return events_.size() > after_seq; });
}

void DeviceState::increment(const std::string& counter, std::uint64_t by) {
  std::lock_guard lk(mu_);
  counters_[counter] += by;
}

std::map<std::string, std::uint64_t> DeviceState::counters() const {
  std::lock_guard lk(mu_);
  return counters_;
}

// ---- PatientAgent ----

PatientAgent::PatientAgent(Runtime& runtime, DeviceState& state, rfid::TagReader& reader)
    : runtime_(runtime), state_(state), reader_(reader) {}

void PatientAgent::on_tag(std::uint64_t uid) {
  std::string cause;
  try {
    auto card = decode_cip(rfid::read_full_card(reader_, uid));
    state_.set_current_patient(uid, card);
    runtime_.send(AgentId::Patient, AgentId::Physician, PatientIdentified{uid, card});
    return;
  } catch (const CipError& e) {
    cause = to_string(e.code());
  } catch (const rfid::RfidError& e) {
    cause = rfid::to_string(e.code());
  } catch (const std::exception& e) {
    cause = "LinkError";
    state_.increment("reader_errors");
  }
  state_.increment("identification_failures");
  state_.push_event("identification_failed", {{"uid", uid}, {"cause", cause}});
}

CipCard PatientAgent::write_card(const CipPatch& patch, const std::string& principal) {
  auto current = state_.current_patient();
  auto uid = state_.current_uid();
  if (!current || !uid) throw AgentError(AgentErrorCode::NoCurrentPatient);

  const CipCard updated = apply_update(*current, patch, principal,
                                       static_cast<std::uint64_t>(runtime_.clock()()));
  const Bytes image = encode_cip(updated);
  std::string failure;
  try {
    rfid::write_full_card(reader_, *uid, image);
    if (decode_cip(rfid::read_full_card(reader_, *uid)) != updated) failure = "verify mismatch";
  } catch (const rfid::RfidError& e) {
    failure = rfid::to_string(e.code());
  } catch (const CipError& e) {
    failure = std::string("verify ") + to_string(e.code());
  } catch (const std::exception& e) {
    failure = e.what();
    state_.increment("reader_errors");
  }
  if (!failure.empty()) {
    try {
      rfid::write_full_card(reader_, *uid, encode_cip(*current));
    } catch (const std::exception&) {
    }
    state_.increment("card_write_failures");
    throw AgentError(AgentErrorCode::TagWriteFailed, failure);
  }
  state_.update_card(updated);
  state_.increment("card_writes");
  runtime_.send(AgentId::Patient, AgentId::Physician, CardUpdated{updated});
  return updated;
}

// ---- BiometricAgent ----

BiometricAgent::BiometricAgent(Runtime& runtime, DeviceState& state, vitals::Thresholds thresholds,
                               std::size_t window_size)
    : runtime_(runtime), state_(state), thresholds_(std::move(thresholds)), window_(window_size) {}

void BiometricAgent::on_envelope(const Envelope& envelope) {
  if (envelope.kind() == EnvelopeKind::PatientIdentified) window_.reset();
}

void BiometricAgent::on_sample(const vitals::VitalSample& sample) {
  auto patient = state_.current_patient();
  if (!patient) {
    state_.increment("drops");
    return;
  }
  state_.record_sample(sample);

  auto classification = vitals::Classification::Normal;
  try {
    classification = vitals::evaluate(sample, thresholds_);
  } catch (const vitals::VitalsError&) {
    state_.increment("missing_threshold");
  }
  if (classification != vitals::Classification::Normal) {
    AlarmEvent alarm;
    alarm.id = state_.next_alarm_id();
    alarm.serial = patient->serial;
    alarm.sample = sample;
    alarm.classification = classification;
    runtime_.send(AgentId::Biometric, AgentId::Physician, alarm);
  }
  for (auto& result : window_.add(patient->serial, sample)) {
    runtime_.send(AgentId::Biometric, AgentId::Physician, ResultsAvailable{result});
  }
}

// ---- PhysicianAgent ----

PhysicianAgent::PhysicianAgent(Runtime& runtime, DeviceState& state) : runtime_(runtime), state_(state) {}

void PhysicianAgent::on_envelope(const Envelope& envelope) {
  if (const auto* p = std::get_if<PatientIdentified>(&envelope.payload)) {
    state_.push_event("patient_identified",
                      {{"uid", p->uid}, {"serial", p->card.serial}, {"card", p->card},
                       {"envelope_id", envelope.id}});
  } else if (const auto* r = std::get_if<ResultsAvailable>(&envelope.payload)) {
    state_.store_result(r->result);
    state_.push_event("result", {{"result", r->result}, {"envelope_id", envelope.id}});
    auto patient = state_.current_patient();
    if (!patient || patient->serial != r->result.serial) {
      state_.increment("stale_results");
      return;
    }
    runtime_.send(AgentId::Physician, AgentId::Simopac, TestResult{r->result});
  } else if (const auto* a = std::get_if<AlarmEvent>(&envelope.payload)) {
    state_.append_alarm(*a);
    state_.push_event("alarm", {{"alarm", *a}, {"envelope_id", envelope.id}});
  } else if (const auto* s = std::get_if<SupplementaryResponse>(&envelope.payload)) {
    state_.cache_supplementary(*s);
    state_.fulfill_supplementary(*s);
    state_.push_event("supplementary", *s);
  } else if (const auto* c = std::get_if<CardUpdated>(&envelope.payload)) {
    state_.push_event("card_updated", {{"card", c->card}, {"envelope_id", envelope.id}});
  }
}

void PhysicianAgent::request_supplementary(std::uint64_t request_id) {
  auto patient = state_.current_patient();
  if (!patient) {
    SupplementaryResponse failed;
    failed.request_id = request_id;
    failed.cause = "NoCurrentPatient";
    state_.fulfill_supplementary(failed);
    return;
  }
  runtime_.send(AgentId::Physician, AgentId::Simopac,
                SupplementaryRequest{request_id, patient->serial, patient->server_uri, patient->language});
}

// ---- SimopacAgent ----

const char* to_string(DeliveryOutcome::Status status) {
  switch (status) {
    case DeliveryOutcome::Status::Delivered: return "Delivered";
    case DeliveryOutcome::Status::AckNegative: return "AckNegative";
    case DeliveryOutcome::Status::Timeout: return "Timeout";
    case DeliveryOutcome::Status::Failed: return "Failed";
  }
  return "Failed";
}

SimopacAgent::SimopacAgent(Runtime& runtime, DeviceState& state, hl7::Endpoint endpoint,
                           hl7::RetryPolicy retry, RecordFetcher& fetcher)
    : runtime_(runtime), state_(state), endpoint_(std::move(endpoint)), retry_(std::move(retry)),
      fetcher_(fetcher) {}

void SimopacAgent::on_envelope(const Envelope& envelope) {
  if (const auto* t = std::get_if<TestResult>(&envelope.payload)) {
    deliver(t->result);
  } else if (const auto* q = std::get_if<SupplementaryRequest>(&envelope.payload)) {
    auto response = fetcher_.fetch(*q);
    response.request_id = q->request_id;
    response.serial = q->serial;
    if (!response.ok) state_.increment("supplementary_failures");
    runtime_.send(AgentId::Simopac, AgentId::Physician, response);
  }
}

DeliveryOutcome SimopacAgent::deliver(const vitals::BiometricResult& result) {
  DeliveryOutcome outcome;
  auto card = state_.current_patient();
  try {
    if (!card) throw hl7::Hl7Error(hl7::Hl7ErrorCode::SerialMismatch, "no current patient");
    auto msg = hl7::build_oru(*card, result, hl7::next_control_id(), runtime_.clock()());
    auto ack = hl7::send_and_await_ack(endpoint_, msg, retry_, &outcome.attempts);
    if (ack.code == hl7::AckCode::AA) {
      outcome.status = DeliveryOutcome::Status::Delivered;
    } else {
      outcome.status = DeliveryOutcome::Status::AckNegative;
      outcome.detail = hl7::to_string(ack.code);
    }
  } catch (const hl7::Hl7Error& e) {
    outcome.status = e.code() == hl7::Hl7ErrorCode::Timeout ? DeliveryOutcome::Status::Timeout
                                                             : DeliveryOutcome::Status::Failed;
    outcome.detail = e.what();
  }
  if (outcome.attempts > 1) state_.increment("delivery_retries", static_cast<std::uint64_t>(outcome.attempts - 1));
  switch (outcome.status) {
    case DeliveryOutcome::Status::Delivered:
      state_.increment("delivered");
      state_.push_event("delivered", {{"result", result}, {"attempts", outcome.attempts}});
      break;
    case DeliveryOutcome::Status::AckNegative:
      state_.increment("ack_negative");
      state_.increment("delivery_failures");
      state_.push_event("delivery_failed", {{"result", result}, {"cause", "AckNegative"}, {"detail", outcome.detail}});
      break;
    default:
      state_.increment("delivery_failures");
      state_.push_event("delivery_failed",
                        {{"result", result}, {"cause", to_string(outcome.status)}, {"detail", outcome.detail}});
      break;
  }
  return outcome;
}

void to_json(nlohmann::json& j, const AlarmEvent& a) {
  j = {{"id", a.id},
       {"serial", a.serial},
       {"sample", a.sample},
       {"classification", vitals::to_string(a.classification)},
       {"acknowledged", a.acknowledged},
       {"acknowledged_by", a.acknowledged_by ? nlohmann::json(*a.acknowledged_by) : nlohmann::json()}};
}

void to_json(nlohmann::json& j, const SupplementaryResponse& r) {
  j = {{"request_id", r.request_id}, {"serial", r.serial}, {"ok", r.ok}};
  if (r.ok) {
    j["record"] = r.record;
  } else {
    j["cause"] = r.cause;
  }
}

}  // namespace cipdev::agents
