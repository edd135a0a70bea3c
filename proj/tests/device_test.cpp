#include <gtest/gtest.h>

#include <httplib.h>

#include <fstream>
#include <thread>

#include "cipdev/config.hpp"
#include "cipdev/device.hpp"
#include "cipdev/simopac.hpp"
#include "test_util.hpp"

using namespace cipdev;
using namespace cipdev::device;
using nlohmann::json;
using testutil::TempDir;

namespace {

auth::UserTable device_users() {
  return auth::UserTable::from_json({auth::user_to_json(auth::make_user("drpop", "pw1", auth::Role::Physician)),
                                     auth::user_to_json(auth::make_user("nurse", "pw2", auth::Role::Viewer)),
                                     auth::user_to_json(auth::make_user("ops", "pw3", auth::Role::Admin))});
}

template <class Pred>
bool eventually(Pred pred, int timeout_ms = 5000) {
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return pred();
}

CipCard patient_card(std::uint64_t serial, const std::string& uri) {
  CipCard c;
  c.serial = serial;
  c.server_uri = uri;
  c.language = "ro";
  c.allergies = {"penicillin"};
  return c;
}

// A device over an in-memory tag field, deterministic runtime, real HTTP API.
struct Stack {
  explicit Stack(std::string simopac_uri = "http://127.0.0.1:1/", std::filesystem::path ui = {})
      : uri(std::move(simopac_uri)) {
    DeviceOptions o;
    o.mode = agents::Runtime::Mode::Deterministic;
    o.poll_interval = std::chrono::milliseconds(20);
    o.hl7_endpoint = {"127.0.0.1", 1};
    o.retry.attempts = 1;
    o.retry.backoff_ms = {1};
    o.retry.connect_timeout_ms = 100;
    o.retry.ack_timeout_ms = 100;
    o.simopac_user = "device";
    o.simopac_password = "devpw";
    dev = std::make_unique<Device>(o, field, std::make_unique<HttpRecordFetcher>("device", "devpw"));
    dev->start();
    api = std::make_unique<DeviceApi>(*dev, device_users(), "127.0.0.1", 0, std::move(ui),
                                      std::chrono::milliseconds(5000));
    client = std::make_unique<httplib::Client>("127.0.0.1", api->port());
    client->set_read_timeout(10, 0);
  }
  ~Stack() {
    api->stop();
    dev->stop();
  }

  std::string login(const std::string& user, const std::string& pw) {
    auto res = client->Post("/login", json{{"user", user}, {"password", pw}}.dump(), "application/json");
    if (!res || res->status != 200) return {};
    return json::parse(res->body).at("token").get<std::string>();
  }

  httplib::Result call(const std::string& method, const std::string& path, const std::string& token = {},
                       const std::string& body = "{}") {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    if (method == "GET") return client->Get(path, h);
    if (method == "PUT") return client->Put(path, h, body, "application/json");
    return client->Post(path, h, body, "application/json");
  }

  void identify(std::uint64_t uid, const CipCard& card) {
    field.add_tag(uid, encode_cip(card));
    ASSERT_TRUE(eventually([&] { return dev->state().current_patient().has_value(); }));
  }

  std::string uri;
  rfid::TagField field;
  std::unique_ptr<Device> dev;
  std::unique_ptr<DeviceApi> api;
  std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST(DeviceApi, EverySessionRouteDeniesWithoutToken) {
  Stack s;
  std::size_t guarded = 0;
  for (const auto& r : api_routes()) {
    if (!r.requires_session) continue;
    ++guarded;
    for (const std::string token : {"", "not-a-token"}) {
      auto res = s.call(r.method, r.path, token);
      ASSERT_TRUE(res) << r.method << " " << r.path;
      EXPECT_EQ(res->status, 401) << r.method << " " << r.path << " token=" << token;
    }
  }
  EXPECT_GE(guarded, 8u);
  auto health = s.call("GET", "/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
}

TEST(DeviceApi, LoginRejectsBadCredentials) {
  Stack s;
  EXPECT_TRUE(s.login("drpop", "wrong").empty());
  EXPECT_TRUE(s.login("nobody", "pw1").empty());
  auto res = s.client->Post("/login", "not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  auto ok = s.client->Post("/login", json{{"user", "drpop"}, {"password", "pw1"}}.dump(), "application/json");
  ASSERT_TRUE(ok);
  auto body = json::parse(ok->body);
  EXPECT_EQ(body["role"], "physician");
  EXPECT_EQ(body["principal"], "drpop");
}

TEST(DeviceApi, ViewerCannotMutate) {
  Stack s;
  s.identify(7, patient_card(42, s.uri));
  auto viewer = s.login("nurse", "pw2");
  ASSERT_FALSE(viewer.empty());
  EXPECT_EQ(s.call("GET", "/patient", viewer)->status, 200);
  EXPECT_EQ(s.call("PUT", "/cip", viewer, R"({"allergies":["x"]})")->status, 403);
  EXPECT_EQ(s.call("POST", "/alarms/1/ack", viewer)->status, 403);
  EXPECT_EQ(s.call("POST", "/supplementary", viewer)->status, 403);
  auto admin = s.login("ops", "pw3");
  EXPECT_EQ(s.call("PUT", "/cip", admin, R"({"allergies":["x"]})")->status, 403);
  // Nothing was written.
  EXPECT_EQ(decode_cip(rfid::read_full_card(s.field, 7)).allergies, std::vector<std::string>{"penicillin"});
}

TEST(DeviceApi, TokenInQueryString) {
  Stack s;
  auto token = s.login("nurse", "pw2");
  EXPECT_EQ(s.client->Get("/diag?token=" + token)->status, 200);
  EXPECT_EQ(s.client->Get("/diag?token=bogus")->status, 401);
}

TEST(DeviceApi, PatientAndCardUpdate) {
  Stack s;
  auto token = s.login("drpop", "pw1");
  EXPECT_EQ(s.call("GET", "/patient", token)->status, 404);
  EXPECT_EQ(s.call("PUT", "/cip", token, R"({"allergies":["x"]})")->status, 409);

  s.identify(7, patient_card(42, s.uri));
  auto patient = json::parse(s.call("GET", "/patient", token)->body);
  EXPECT_EQ(patient["serial"], 42);

  auto res = s.call("PUT", "/cip", token, R"({"allergies":["latex","iodine"],"chronic_disease":true})");
  ASSERT_EQ(res->status, 200) << res->body;
  auto updated = json::parse(res->body).get<CipCard>();
  EXPECT_EQ(updated.modifier_id, "drpop");

  auto on_tag = decode_cip(rfid::read_full_card(s.field, 7));
  EXPECT_EQ(on_tag, updated);
  EXPECT_EQ(on_tag.allergies, (std::vector<std::string>{"latex", "iodine"}));
  EXPECT_TRUE(on_tag.chronic_disease);
  EXPECT_EQ(on_tag.serial, 42u);
  EXPECT_EQ(*s.dev->state().current_patient(), updated);
}

TEST(DeviceApi, CardUpdateValidation) {
  Stack s;
  auto token = s.login("drpop", "pw1");
  s.identify(7, patient_card(42, s.uri));
  auto before = rfid::read_full_card(s.field, 7);

  auto res = s.call("PUT", "/cip", token, R"({"serial":43})");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["error"], "ImmutableField");

  res = s.call("PUT", "/cip", token, json{{"allergies", {std::string(300, 'a')}}}.dump());
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["field"], "allergies");

  res = s.call("PUT", "/cip", token, "{broken");
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(rfid::read_full_card(s.field, 7), before);
}

TEST(DeviceApi, VitalsAlarmsAndAck) {
  Stack s;
  auto token = s.login("drpop", "pw1");
  s.identify(7, patient_card(42, s.uri));

  VitalsListener listener(*s.dev, "127.0.0.1", 0);
  {
    auto stream = net::TcpStream::connect("127.0.0.1", listener.port(), net::Millis(1000));
    for (int i = 0; i < 9; ++i)
      stream.write_all("VITAL ecg1 HR " + std::to_string(70 + i) + " bpm " + std::to_string(1700000000 + i) + "\n");
    stream.write_all("VITAL t1 TEMP 39.2 C 1700000009\n");
    stream.write_all("garbage line\n");
  }
  ASSERT_TRUE(eventually([&] { return s.dev->state().latest_results().size() == 2; }));
  ASSERT_TRUE(eventually([&] { return s.dev->state().counters()["parse_errors"] == 1; }));

  auto alarms = json::parse(s.call("GET", "/alarms", token)->body);
  ASSERT_EQ(alarms.size(), 1u);
  EXPECT_EQ(alarms[0]["serial"], 42);
  EXPECT_FALSE(alarms[0]["acknowledged"].get<bool>());
  auto id = alarms[0]["id"].get<std::uint64_t>();

  auto hr = json::parse(s.call("GET", "/vitals?kind=HR&limit=5", token)->body);
  EXPECT_EQ(hr["samples"].size(), 5u);
  EXPECT_FALSE(hr["latest_result"].is_null());
  EXPECT_EQ(s.call("GET", "/vitals?kind=XYZ", token)->status, 400);
  EXPECT_EQ(json::parse(s.call("GET", "/vitals", token)->body).size(), vitals::kAllKinds.size());

  auto path = "/alarms/" + std::to_string(id) + "/ack";
  auto ack = s.call("POST", path, token);
  ASSERT_EQ(ack->status, 200);
  EXPECT_EQ(json::parse(ack->body)["acknowledged_by"], "drpop");
  EXPECT_EQ(s.call("POST", path, token)->status, 409);
  EXPECT_EQ(s.call("POST", "/alarms/999/ack", token)->status, 404);
  EXPECT_EQ(s.call("POST", "/alarms/abc/ack", token)->status, 404);

  auto diag = json::parse(s.call("GET", "/diag", token)->body);
  EXPECT_EQ(diag["mode"], "deterministic");
  EXPECT_EQ(diag["counters"]["parse_errors"], 1);
  listener.stop();
}

TEST(DeviceApi, EventStreamCarriesAlarm) {
  Stack s;
  auto token = s.login("nurse", "pw2");
  s.identify(7, patient_card(42, s.uri));
  s.dev->submit_sample({"t1", vitals::Kind::TEMP, 40.0, 1700000000, "C"});
  for (int i = 1; i < 10; ++i) s.dev->submit_sample({"ecg1", vitals::Kind::HR, 70.0, 1700000000 + i, "bpm"});

  std::string received;
  httplib::Client sse("127.0.0.1", s.api->port());
  sse.set_read_timeout(5, 0);
  auto res = sse.Get("/events", {{"Authorization", "Bearer " + token}},
                     [&](const char* data, std::size_t n) {
                       received.append(data, n);
                       return received.find("event: alarm") == std::string::npos ||
                              received.find("\n\n", received.find("event: alarm")) == std::string::npos;
                     });
  EXPECT_NE(received.find("event: patient_identified"), std::string::npos);
  auto at = received.find("event: alarm");
  ASSERT_NE(at, std::string::npos);
  auto data_at = received.find("data: ", at);
  auto line = received.substr(data_at + 6, received.find('\n', data_at) - data_at - 6);
  EXPECT_EQ(json::parse(line)["alarm"]["serial"], 42);
  EXPECT_LT(received.find("event: patient_identified"), at);
}

TEST(DeviceApi, UiHosting) {
  {
    Stack s;
    auto res = s.client->Get("/ui/index.html");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    EXPECT_EQ(json::parse(res->body)["error"], "NoUiInstalled");
  }
  TempDir dir;
  std::ofstream(dir.path() / "index.html") << "<html>ui</html>";
  Stack s("http://127.0.0.1:1/", dir.path());
  auto res = s.client->Get("/ui/index.html");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "<html>ui</html>");
}

TEST(DeviceApi, PortInUse) {
  Stack s;
  try {
    DeviceApi again(*s.dev, device_users(), "127.0.0.1", s.api->port());
    FAIL() << "bound twice";
  } catch (const net::NetError& e) {
    EXPECT_EQ(e.code(), net::NetErrorCode::PortInUse);
  }
}

TEST(DeviceApi, SupplementaryThroughSimopac) {
  TempDir dir;
  simopac::ServerOptions so;
  so.host = "127.0.0.1";
  so.mllp_port = 0;
  so.http_port = 0;
  so.data_dir = dir.path();
  auto server_users = auth::UserTable::from_json(json::array({auth::user_to_json(auth::make_user("device", "devpw", auth::Role::Physician))}));
  simopac::SimopacServer server(so, server_users, {{42, {"Ion Pop", 1960}}});
  const std::string uri = "http://127.0.0.1:" + std::to_string(server.http_port()) + "/";

  Stack s(uri);
  auto token = s.login("drpop", "pw1");
  EXPECT_EQ(s.call("POST", "/supplementary", token)->status, 409);

  s.identify(7, patient_card(42, uri));
  auto res = s.call("POST", "/supplementary", token);
  ASSERT_EQ(res->status, 200) << res->body;
  auto body = json::parse(res->body);
  EXPECT_EQ(body["serial"], 42);
  EXPECT_EQ(body["record"]["display_name"], "Ion Pop");

  s.field.remove_tag(7);
  s.identify(8, patient_card(77, uri));
  ASSERT_TRUE(eventually([&] { return s.dev->state().current_patient()->serial == 77; }));
  res = s.call("POST", "/supplementary", token);
  EXPECT_EQ(res->status, 404);
  EXPECT_TRUE(json::parse(res->body)["upstream"].get<bool>());
  server.stop();
}

TEST(DeviceApi, SupplementaryServerDown) {
  Stack s;
  auto token = s.login("drpop", "pw1");
  s.identify(7, patient_card(42, s.uri));
  auto res = s.call("POST", "/supplementary", token);
  EXPECT_EQ(res->status, 502);
  EXPECT_EQ(json::parse(res->body)["error"], "ServerUnreachable");
}

TEST(SplitServerUri, Forms) {
  EXPECT_EQ(split_server_uri("http://h:1/"), (std::pair<std::string, std::string>{"http://h:1", ""}));
  EXPECT_EQ(split_server_uri("http://h:1/ehr/"), (std::pair<std::string, std::string>{"http://h:1", "/ehr"}));
  EXPECT_EQ(split_server_uri("http://h"), (std::pair<std::string, std::string>{"http://h", ""}));
}

TEST(Config, DefaultsAndOverrides) {
  auto c = parse_config(json::object());
  EXPECT_EQ(c.device.port, 4500);
  EXPECT_EQ(c.reader.port, 4501);
  EXPECT_EQ(c.vitals.port, 4502);
  EXPECT_EQ(c.simopac.mllp_port, 4503);
  EXPECT_EQ(c.simopac.http_port, 4504);
  EXPECT_EQ(c.device.window_size, 10u);

  TempDir dir;
  auto path = dir.path() / "cfg.json";
  std::ofstream(path) << R"({"device":{"port":5000,"ui_dir":"ui"},"simopac":{"data_dir":"data",
    "patients":[{"serial":42,"display_name":"Ion Pop","birth_year":1960}]}})";
  auto loaded = load_config(path);
  EXPECT_EQ(loaded.device.port, 5000);
  EXPECT_EQ(loaded.device.ui_dir, dir.path() / "ui");
  EXPECT_EQ(loaded.simopac.data_dir, dir.path() / "data");
  EXPECT_EQ(loaded.simopac.patients.at(42).display_name, "Ion Pop");
}

TEST(Config, ErrorsNameTheProblem) {
  TempDir dir;
  auto path = dir.path() / "bad.json";
  std::ofstream(path) << "{\n\"device\": {\n\"port\": ,\n}}";
  try {
    load_config(path);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_config(dir.path() / "missing.json"), ConfigError);
  auto write = [&](const std::string& text) {
    std::ofstream(path, std::ios::trunc) << text;
    return path;
  };
  EXPECT_THROW(load_config(write(R"({"device":{"port":"x"}})")), ConfigError);
  EXPECT_THROW(load_config(write(R"({"users":[{"name":"a"}]})")), ConfigError);
  EXPECT_THROW(load_config(write(R"({"simopac":{"users":[{"user":"a","role":"boss"}]}})")), ConfigError);
  EXPECT_THROW(load_config(write("[1,2]")), ConfigError);
}
