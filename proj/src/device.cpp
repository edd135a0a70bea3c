#include "cipdev/device.hpp"

#include <httplib.h>

namespace cipdev::device {

std::pair<std::string, std::string> split_server_uri(const std::string& uri) {
  std::string rest = uri;
  std::string scheme = "http://";
  if (auto pos = rest.find("://"); pos != std::string::npos) {
    scheme = rest.substr(0, pos + 3);
    rest = rest.substr(pos + 3);
  }
  std::string path;
  if (auto slash = rest.find('/'); slash != std::string::npos) {
    path = rest.substr(slash);
    rest = rest.substr(0, slash);
  }
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {scheme + rest, path};
}

HttpRecordFetcher::HttpRecordFetcher(std::string user, std::string password,
                                     std::chrono::milliseconds timeout)
    : user_(std::move(user)), password_(std::move(password)), timeout_(timeout) {}

agents::SupplementaryResponse HttpRecordFetcher::fetch(const agents::SupplementaryRequest& request) {
  agents::SupplementaryResponse response;
  response.request_id = request.request_id;
  response.serial = request.serial;

  auto [base, prefix] = split_server_uri(request.server_uri);
  httplib::Client client(base);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);

  auto login = [&]() -> std::optional<std::string> {
    nlohmann::json body = {{"user", user_}, {"password", password_}};
    auto res = client.Post(prefix + "/login", body.dump(), "application/json");
    if (!res) throw std::runtime_error("ServerUnreachable");
    if (res->status != 200) return std::nullopt;
    return nlohmann::json::parse(res->body).at("token").get<std::string>();
  };

  std::lock_guard lk(mu_);
  try {
    const std::string path = prefix + "/patients/" + std::to_string(request.serial) +
                             "?lang=" + request.language;
    for (int attempt = 0; attempt < 2; ++attempt) {
      auto& token = tokens_[base];
      if (token.empty()) {
        auto fresh = login();
        if (!fresh) {
          response.cause = "Unauthorized";
          return response;
        }
        token = *fresh;
      }
      auto res = client.Get(path, {{"Authorization", "Bearer " + token}});
      if (!res) {
        response.cause = "ServerUnreachable";
        return response;
      }
      if (res->status == 401) {
        token.clear();
        continue;
      }
      if (res->status == 404) {
        response.cause = "UnknownPatient";
        return response;
      }
      if (res->status != 200) {
        response.cause = "ServerUnreachable";
        return response;
      }
      response.ok = true;
      response.record = nlohmann::json::parse(res->body);
      return response;
    }
    response.cause = "Unauthorized";
  } catch (const std::exception&) {
    response.cause = "ServerUnreachable";
  }
  return response;
}

Device::Device(DeviceOptions options, rfid::TagReader& reader,
               std::unique_ptr<agents::RecordFetcher> fetcher)
    : options_(std::move(options)),
      reader_(reader),
      state_(options_.clock),
      runtime_(options_.mode, options_.clock),
      fetcher_(fetcher ? std::move(fetcher)
                       : std::make_unique<HttpRecordFetcher>(options_.simopac_user,
                                                             options_.simopac_password)),
      patient_(runtime_, state_, reader_),
      biometric_(runtime_, state_, options_.thresholds, options_.window_size),
      physician_(runtime_, state_),
      simopac_(runtime_, state_, options_.hl7_endpoint, options_.retry, *fetcher_) {
  using agents::AgentId;
  using agents::EnvelopeKind;
  runtime_.add_agent(AgentId::Patient, patient_);
  runtime_.add_agent(AgentId::Biometric, biometric_);
  runtime_.add_agent(AgentId::Physician, physician_);
  runtime_.add_agent(AgentId::Simopac, simopac_);
  runtime_.subscribe(AgentId::Biometric, {EnvelopeKind::PatientIdentified});
  runtime_.subscribe(AgentId::Physician,
                     {EnvelopeKind::PatientIdentified, EnvelopeKind::ResultsAvailable, EnvelopeKind::Alarm,
                      EnvelopeKind::SupplementaryResponse, EnvelopeKind::CardUpdated});
  runtime_.subscribe(AgentId::Simopac, {EnvelopeKind::TestResult, EnvelopeKind::SupplementaryRequest});
}

Device::~Device() { stop(); }

void Device::start() {
  runtime_.start();
  if (options_.poll_interval.count() > 0 && !poll_thread_.joinable()) {
    poll_thread_ = std::thread([this] { poll_loop(); });
  }
}

void Device::stop() {
  {
    std::lock_guard lk(poll_mu_);
    stopping_ = true;
  }
  poll_cv_.notify_all();
  if (poll_thread_.joinable()) poll_thread_.join();
  runtime_.stop();
}

void Device::poll_loop() {
  std::unique_lock lk(poll_mu_);
  while (!stopping_) {
    lk.unlock();
    poll_reader_once();
    lk.lock();
    poll_cv_.wait_for(lk, options_.poll_interval, [this] { return stopping_; });
  }
}

void Device::poll_reader_once() {
  std::vector<std::uint64_t> uids;
  try {
    uids = reader_.inventory();
  } catch (const std::exception&) {
    state_.increment("reader_errors");
    return;
  }
  std::set<std::uint64_t> now(uids.begin(), uids.end());
  std::vector<std::uint64_t> arrived;
  {
    std::lock_guard lk(poll_mu_);
    for (auto uid : now) {
      if (!seen_.count(uid)) arrived.push_back(uid);
    }
    seen_ = std::move(now);
  }
  for (auto uid : arrived) {
    runtime_.post(agents::AgentId::Patient, [this, uid] { patient_.on_tag(uid); });
  }
}

void Device::submit_sample(const vitals::VitalSample& sample) {
  runtime_.post(agents::AgentId::Biometric, [this, sample] { biometric_.on_sample(sample); });
}

void Device::submit_vital_line(const std::string& line) {
  if (line.empty()) return;
  try {
    submit_sample(vitals::parse_vital_line(line));
  } catch (const vitals::VitalsError&) {
    state_.increment("parse_errors");
  }
}

std::future<CipCard> Device::update_card(CipPatch patch, std::string principal) {
  auto promise = std::make_shared<std::promise<CipCard>>();
  auto future = promise->get_future();
  runtime_.post(agents::AgentId::Patient, [this, promise, patch = std::move(patch),
                                           principal = std::move(principal)] {
    try {
      promise->set_value(patient_.write_card(patch, principal));
    } catch (...) {
      promise->set_exception(std::current_exception());
    }
  });
  return future;
}

std::future<agents::SupplementaryResponse> Device::request_supplementary() {
  auto [id, future] = state_.register_supplementary_wait();
  runtime_.post(agents::AgentId::Physician, [this, id = id] { physician_.request_supplementary(id); });
  return std::move(future);
}

agents::AlarmEvent Device::acknowledge_alarm(std::uint64_t id, const std::string& identity) {
  return state_.acknowledge_alarm(id, identity);
}

VitalsListener::VitalsListener(Device& device, const std::string& host, std::uint16_t port)
    : device_(device),
      server_(host, port, [this](net::TcpStream& stream, const std::atomic<bool>& stopping) {
        net::LineReader lines(stream);
        while (!stopping) {
          std::optional<std::string> line;
          try {
            line = lines.next(net::Millis(100));
          } catch (const net::NetError& e) {
            if (e.code() == net::NetErrorCode::Timeout) continue;
            return;
          }
          if (!line) return;
          device_.submit_vital_line(*line);
        }
      }) {}

}  // namespace cipdev::device
