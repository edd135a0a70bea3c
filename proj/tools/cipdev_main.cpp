#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cipdev/cip.hpp"
#include "cipdev/config.hpp"
#include "cipdev/device.hpp"
#include "cipdev/net.hpp"
#include "cipdev/scenario.hpp"
#include "cipdev/simopac.hpp"
#include "cipdev/tagsim.hpp"

using namespace cipdev;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailed = 1, kBadConfig = 2, kPortInUse = 3 };

sigset_t shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  return set;
}

// Block before any thread starts so only sigwait sees them.
void block_signals() {
  auto set = shutdown_signals();
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

int wait_for_signal() {
  auto set = shutdown_signals();
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

void announce(const std::string& line) {
  std::cout << line << std::endl;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Bytes from_hex(std::string s) {
  s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }), s.end());
  if (s.size() % 2) throw std::runtime_error("odd hex length");
  Bytes out;
  for (std::size_t i = 0; i < s.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(s.substr(i, 2), nullptr, 16)));
  }
  return out;
}

AppConfig config_or_default(const std::string& path) {
  if (path.empty()) return AppConfig{};
  return load_config(path);
}

struct Common {
  std::string config;
  int port = -1;
  std::string data_dir;
  bool deterministic = false;
};

int run_device(const Common& c) {
  auto cfg = config_or_default(c.config);
  if (c.port >= 0) cfg.device.port = static_cast<std::uint16_t>(c.port);

  auto opt = device_options(cfg, c.deterministic);
  rfid::RemoteReader reader(cfg.reader.host, cfg.reader.port);
  device::Device dev(opt, reader);
  dev.start();
  device::VitalsListener vitals(dev, cfg.device.host, cfg.vitals.port);
  device::DeviceApi api(dev, auth::UserTable::from_json(cfg.users), cfg.device.host, cfg.device.port,
                        cfg.device.ui_dir);
  announce("device http=" + std::to_string(api.port()) + " vitals=" + std::to_string(vitals.port()));
  wait_for_signal();
  api.stop();
  vitals.stop();
  dev.stop();
  return kOk;
}

int run_simopac(const Common& c, int mllp_port) {
  auto cfg = config_or_default(c.config);
  simopac::ServerOptions opt;
  opt.host = cfg.simopac.host;
  opt.http_port = c.port >= 0 ? static_cast<std::uint16_t>(c.port) : cfg.simopac.http_port;
  opt.mllp_port = mllp_port >= 0 ? static_cast<std::uint16_t>(mllp_port) : cfg.simopac.mllp_port;
  opt.data_dir = c.data_dir.empty() ? cfg.simopac.data_dir : std::filesystem::path(c.data_dir);
  std::filesystem::create_directories(opt.data_dir);

  simopac::SimopacServer server(opt, auth::UserTable::from_json(cfg.simopac.users), cfg.simopac.patients);
  if (server.dropped_corrupt_line() != 0) {
    std::cerr << "simopac: dropped torn log tail at line " << server.dropped_corrupt_line() << "\n";
  }
  announce("simopac http=" + std::to_string(server.http_port()) + " mllp=" + std::to_string(server.mllp_port()));
  wait_for_signal();
  server.stop();
  return kOk;
}

int run_tagsim(const Common& c, const std::vector<std::string>& cards) {
  auto cfg = config_or_default(c.config);
  std::uint16_t port = c.port >= 0 ? static_cast<std::uint16_t>(c.port) : cfg.reader.port;
  rfid::TagField field;
  for (const auto& spec : cards) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) throw std::runtime_error("--tag expects UID=CARD.json");
    auto uid = std::stoull(spec.substr(0, eq));
    auto card = json::parse(read_file(spec.substr(eq + 1))).get<CipCard>();
    field.add_tag(uid, encode_cip(card));
  }
  rfid::TagSimServer server(field, "0.0.0.0", port);
  announce("tagsim port=" + std::to_string(server.port()));
  wait_for_signal();
  server.stop();
  return kOk;
}

int run_vitalsim(const Common& c, std::string host, const std::string& file, int interval_ms) {
  auto cfg = config_or_default(c.config);
  if (host.empty()) host = cfg.vitals.host;
  std::uint16_t port = c.port >= 0 ? static_cast<std::uint16_t>(c.port) : cfg.vitals.port;
  std::ifstream fin;
  std::istream* in = &std::cin;
  if (!file.empty() && file != "-") {
    fin.open(file);
    if (!fin) throw std::runtime_error("cannot read " + file);
    in = &fin;
  }
  auto stream = net::TcpStream::connect(host, port, net::Millis(2000));
  std::string line;
  std::size_t sent = 0;
  while (std::getline(*in, line)) {
    if (line.empty() || line[0] == '#') continue;
    stream.write_all(line + "\n");
    ++sent;
    if (interval_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(interval_ms));
  }
  stream.shutdown();
  std::cerr << "vitalsim: sent " << sent << " lines\n";
  return kOk;
}

int run_cip_encode(const std::string& input, const std::string& output) {
  try {
    auto card = json::parse(read_file(input)).get<CipCard>();
    auto image = encode_cip(card);
    if (output.empty()) {
      std::cout << to_hex(image) << "\n";
    } else {
      std::ofstream out(output, std::ios::binary);
      out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
    }
    return kOk;
  } catch (const CipError& e) {
    json err{{"error", to_string(e.code())}};
    if (!e.field().empty()) err["field"] = e.field();
    std::cout << err.dump() << "\n";
    return kFailed;
  }
}

int run_cip_decode(const std::string& input, bool hex) {
  auto raw = read_file(input);
  Bytes image = hex ? from_hex(raw) : Bytes(raw.begin(), raw.end());
  try {
    std::cout << json(decode_cip(image)).dump(2) << "\n";
    return kOk;
  } catch (const CipError& e) {
    json err{{"error", to_string(e.code())}};
    if (!e.field().empty()) err["field"] = e.field();
    std::cout << err.dump() << "\n";
    return kFailed;
  }
}

int run_passwd(const std::string& user, const std::string& role, std::string password) {
  auto r = auth::role_from_string(role);
  if (!r) throw std::runtime_error("unknown role " + role);
  if (password.empty() && !std::getline(std::cin, password)) throw std::runtime_error("no password on stdin");
  std::cout << auth::user_to_json(auth::make_user(user, password, *r)).dump() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RFID patient identification device, simulators and SIMOPAC server"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool data_dir, bool deterministic) {
    sub->add_option("--config", common.config, "JSON config file");
    sub->add_option("--port", common.port, "listen or connect port (0 = ephemeral)");
    if (data_dir) sub->add_option("--data-dir", common.data_dir, "directory for simopac.log");
    if (deterministic) sub->add_flag("--deterministic", common.deterministic, "single-scheduler agent runtime");
  };

  auto* dev = app.add_subcommand("device", "run the bedside device");
  add_common(dev, false, true);

  int mllp_port = -1;
  auto* sim = app.add_subcommand("simopac", "run the SIMOPAC server");
  add_common(sim, true, false);
  sim->add_option("--mllp-port", mllp_port, "HL7 MLLP port");

  std::vector<std::string> tags;
  auto* tag = app.add_subcommand("tagsim", "run the tag and reader simulator");
  add_common(tag, false, false);
  tag->add_option("--tag", tags, "preload UID=card.json");

  std::string vhost;
  std::string vfile;
  int interval = 0;
  auto* vit = app.add_subcommand("vitalsim", "stream VITAL lines to the device");
  add_common(vit, false, false);
  vit->add_option("--host", vhost, "device host");
  vit->add_option("--file", vfile, "lines to send (default stdin)");
  vit->add_option("--interval-ms", interval, "delay between lines");

  auto* cip = app.add_subcommand("cip", "encode or decode card images");
  cip->require_subcommand(1);
  std::string cin_path;
  std::string cout_path;
  bool hex = false;
  auto* enc = cip->add_subcommand("encode", "card JSON to image");
  enc->add_option("input", cin_path, "card JSON")->required();
  enc->add_option("-o,--output", cout_path, "binary output (default hex to stdout)");
  auto* dec = cip->add_subcommand("decode", "image to card JSON");
  dec->add_option("input", cin_path, "image file")->required();
  dec->add_flag("--hex", hex, "input is hex text");

  auto* scen = app.add_subcommand("scenario", "scripted end-to-end runs");
  scen->require_subcommand(1);
  auto* srun = scen->add_subcommand("run", "run a scenario script");
  std::string script;
  std::string report_path;
  scenario::Options sopts;
  std::string o_device, o_tagsim, o_vitals, o_simopac, o_log;
  srun->add_option("script", script, "scenario JSON")->required();
  srun->add_option("--report", report_path, "write the JSON report here");
  srun->add_option("--device", o_device, "device host:port");
  srun->add_option("--tagsim", o_tagsim, "tag simulator host:port");
  srun->add_option("--vitals", o_vitals, "vitals listener host:port");
  srun->add_option("--simopac", o_simopac, "SIMOPAC http host:port");
  srun->add_option("--simopac-log", o_log, "SIMOPAC log file");

  std::string pw_user;
  std::string pw_role = "physician";
  std::string pw_password;
  auto* pw = app.add_subcommand("passwd", "print a user table entry");
  pw->add_option("--user", pw_user)->required();
  pw->add_option("--role", pw_role, "physician, viewer or admin");
  pw->add_option("--password", pw_password, "default: first line of stdin");

  CLI11_PARSE(app, argc, argv);

  block_signals();
  try {
    if (*dev) return run_device(common);
    if (*sim) return run_simopac(common, mllp_port);
    if (*tag) return run_tagsim(common, tags);
    if (*vit) return run_vitalsim(common, vhost, vfile, interval);
    if (*enc) return run_cip_encode(cin_path, cout_path);
    if (*dec) return run_cip_decode(cin_path, hex);
    if (*pw) return run_passwd(pw_user, pw_role, pw_password);
    if (*srun) {
      if (!o_device.empty()) sopts.endpoints.device = o_device;
      if (!o_tagsim.empty()) sopts.endpoints.tagsim = o_tagsim;
      if (!o_vitals.empty()) sopts.endpoints.vitals = o_vitals;
      if (!o_simopac.empty()) sopts.endpoints.simopac = o_simopac;
      if (!o_log.empty()) sopts.endpoints.simopac_log = o_log;
      auto report = scenario::run_file(script, sopts);
      auto j = scenario::to_json(report).dump(2);
      if (!report_path.empty()) std::ofstream(report_path) << j << "\n";
      std::cout << j << "\n";
      return report.passed ? kOk : kFailed;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kBadConfig;
  } catch (const net::NetError& e) {
    std::cerr << e.what() << "\n";
    return e.code() == net::NetErrorCode::PortInUse ? kPortInUse : kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kOk;
}
