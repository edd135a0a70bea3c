#include "cipdev/scenario.hpp"

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "cipdev/cip.hpp"
#include "cipdev/net.hpp"
#include "cipdev/tagsim.hpp"

namespace cipdev::scenario {
namespace {

using json = nlohmann::json;
using steady = std::chrono::steady_clock;

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};

HostPort split(const std::string& s) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ScenarioError("endpoint without port: " + s);
  HostPort hp;
  hp.host = s.substr(0, colon);
  hp.port = static_cast<std::uint16_t>(std::stoul(s.substr(colon + 1)));
  return hp;
}

double ms_since(steady::time_point t0) {
  return std::chrono::duration<double, std::milli>(steady::now() - t0).count();
}

class Context {
 public:
  Context(const json& script, const Options& o) : opts_(o) {
    auto eps = script.value("endpoints", json::object());
    auto pick = [&](const std::optional<std::string>& over, const char* key) -> std::string {
      if (over) return *over;
      return eps.value(key, std::string());
    };
    device_ = pick(o.endpoints.device, "device");
    tagsim_ = pick(o.endpoints.tagsim, "tagsim");
    vitals_ = pick(o.endpoints.vitals, "vitals");
    simopac_ = pick(o.endpoints.simopac, "simopac");
    if (o.endpoints.simopac_log) {
      log_ = *o.endpoints.simopac_log;
    } else if (eps.contains("simopac_log")) {
      log_ = eps["simopac_log"].get<std::string>();
      if (log_.is_relative() && !o.base_dir.empty()) log_ = o.base_dir / log_;
    }
    credentials_ = script.value("credentials", json::object());
  }

  std::string run_step(const std::string& kind, const json& arg) {
    if (kind == "add_tag") return add_tag(arg);
    if (kind == "remove_tag") return remove_tag(arg);
    if (kind == "emit_vital") return emit_vital(arg);
    if (kind == "wait") return wait(arg);
    if (kind == "expect") return expect(arg);
    throw ScenarioError("unknown step kind: " + kind);
  }

 private:
  rfid::RemoteReader& tagsim() {
    if (!reader_) {
      auto hp = split(require(tagsim_, "tagsim"));
      reader_ = std::make_unique<rfid::RemoteReader>(hp.host, hp.port);
    }
    return *reader_;
  }

  static const std::string& require(const std::string& v, const char* what) {
    if (v.empty()) throw ScenarioError(std::string("no endpoint for ") + what);
    return v;
  }

  Bytes load_card(const json& arg) {
    if (arg.contains("card_json")) return encode_cip(arg["card_json"].get<CipCard>());
    std::filesystem::path p = arg.at("card").get<std::string>();
    if (p.is_relative() && !opts_.base_dir.empty()) p = opts_.base_dir / p;
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ScenarioError("cannot read card file " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    std::string raw = ss.str();
    if (p.extension() == ".json") return encode_cip(json::parse(raw).get<CipCard>());
    return Bytes(raw.begin(), raw.end());
  }

  std::string add_tag(const json& arg) {
    auto uid = arg.at("uid").get<std::uint64_t>();
    auto image = load_card(arg);
    tagsim().add_tag(uid, image);
    return "uid " + std::to_string(uid) + ", " + std::to_string(image.size()) + " bytes";
  }

  std::string remove_tag(const json& arg) {
    auto uid = arg.is_object() ? arg.at("uid").get<std::uint64_t>() : arg.get<std::uint64_t>();
    tagsim().remove_tag(uid);
    return "uid " + std::to_string(uid);
  }

  std::string emit_vital(const json& arg) {
    std::vector<std::string> lines;
    if (arg.is_string()) {
      lines.push_back(arg.get<std::string>());
    } else if (arg.is_array()) {
      lines = arg.get<std::vector<std::string>>();
    } else {
      lines = arg.at("lines").get<std::vector<std::string>>();
    }
    if (!vitals_stream_) {
      auto hp = split(require(vitals_, "vitals"));
      vitals_stream_ = std::make_unique<net::TcpStream>(
          net::TcpStream::connect(hp.host, hp.port, net::Millis(2000)));
    }
    std::string out;
    for (auto& l : lines) out += l + "\n";
    vitals_stream_->write_all(to_bytes(out));
    return std::to_string(lines.size()) + " lines";
  }

  std::string wait(const json& arg) {
    if (arg.is_number()) {
      std::this_thread::sleep_for(std::chrono::milliseconds(arg.get<int>()));
      return "slept";
    }
    if (arg.contains("ms")) {
      std::this_thread::sleep_for(std::chrono::milliseconds(arg["ms"].get<int>()));
      return "slept";
    }
    const json& cond = arg.at("until");
    int timeout = arg.value("timeout_ms", opts_.default_wait_ms);
    auto deadline = steady::now() + std::chrono::milliseconds(timeout);
    std::string last;
    for (;;) {
      try {
        return expect(cond);
      } catch (const ScenarioError& e) {
        last = e.what();
      }
      if (steady::now() >= deadline) {
        throw ScenarioError("timed out after " + std::to_string(timeout) + " ms: " + last);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(opts_.poll_ms));
    }
  }

  std::string endpoint_of(const std::string& target) {
    if (target == "device") return require(device_, "device");
    if (target == "simopac") return require(simopac_, "simopac");
    throw ScenarioError("unknown target: " + target);
  }

  std::string token_for(const std::string& target, const std::string& as) {
    auto key = target + "/" + as;
    if (auto it = tokens_.find(key); it != tokens_.end()) return it->second;
    const json* cred = nullptr;
    if (credentials_.contains(target) && credentials_[target].contains(as)) cred = &credentials_[target][as];
    if (!cred) throw ScenarioError("no credentials for " + key);
    auto res = request(target, "POST", "/login", cred->dump(), "");
    if (res.status != 200) throw ScenarioError("login as " + key + " failed with " + std::to_string(res.status));
    auto token = json::parse(res.body).at("token").get<std::string>();
    tokens_[key] = token;
    return token;
  }

  struct Reply {
    int status = 0;
    std::string body;
  };

  Reply request(const std::string& target, const std::string& method, const std::string& path,
                const std::string& body, const std::string& token) {
    auto hp = split(endpoint_of(target));
    httplib::Client cli(hp.host, hp.port);
    cli.set_connection_timeout(2, 0);
    cli.set_read_timeout(20, 0);
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    httplib::Result r;
    if (method == "GET") {
      r = cli.Get(path, headers);
    } else if (method == "POST") {
      r = cli.Post(path, headers, body, "application/json");
    } else if (method == "PUT") {
      r = cli.Put(path, headers, body, "application/json");
    } else if (method == "DELETE") {
      r = cli.Delete(path, headers, body, "application/json");
    } else {
      throw ScenarioError("unsupported method " + method);
    }
    if (!r) throw ScenarioError(method + " " + path + ": " + httplib::to_string(r.error()));
    return {r->status, r->body};
  }

  std::string expect(const json& arg) {
    auto target = arg.value("target", std::string("device"));
    if (target == "simopac_log") {
      if (log_.empty()) throw ScenarioError("no simopac_log endpoint");
      auto type = arg.value("type", std::string("observation"));
      auto n = count_log_entries(log_, type);
      auto want = arg.at("count").get<std::size_t>();
      if (n != want) {
        throw ScenarioError("log has " + std::to_string(n) + " " + type + " lines, want " + std::to_string(want));
      }
      return std::to_string(n) + " " + type + " lines";
    }

    auto method = arg.value("method", std::string("GET"));
    auto path = arg.at("path").get<std::string>();
    std::string token;
    if (arg.contains("as")) token = token_for(target, arg["as"].get<std::string>());
    if (arg.contains("token")) token = arg["token"].get<std::string>();
    std::string body = arg.contains("body") ? arg["body"].dump() : std::string();
    auto reply = request(target, method, path, body, token);

    if (arg.contains("status") && reply.status != arg["status"].get<int>()) {
      throw ScenarioError(method + " " + path + " returned " + std::to_string(reply.status) + ", want " +
                          std::to_string(arg["status"].get<int>()) + ": " + reply.body);
    }
    bool inspects = arg.contains("equals") || arg.contains("count") || arg.contains("exists") ||
                    arg.contains("equals_log_count");
    if (!inspects) return method + " " + path + " -> " + std::to_string(reply.status);

    json doc;
    try {
      doc = json::parse(reply.body);
    } catch (const json::exception&) {
      throw ScenarioError(method + " " + path + ": body is not JSON");
    }
    json::json_pointer ptr(arg.value("pointer", std::string()));
    if (!doc.contains(ptr)) {
      if (arg.contains("exists") && !arg["exists"].get<bool>()) return "absent as expected";
      throw ScenarioError(method + " " + path + ": nothing at " + ptr.to_string());
    }
    const json& v = doc[ptr];
    if (arg.contains("exists") && !arg["exists"].get<bool>()) {
      throw ScenarioError(method + " " + path + ": unexpected value at " + ptr.to_string());
    }
    if (arg.contains("equals") && v != arg["equals"]) {
      throw ScenarioError(ptr.to_string() + " is " + v.dump() + ", want " + arg["equals"].dump());
    }
    if (arg.contains("count")) {
      if (!v.is_array() && !v.is_object()) throw ScenarioError(ptr.to_string() + " is not a collection");
      if (v.size() != arg["count"].get<std::size_t>()) {
        throw ScenarioError(ptr.to_string() + " has " + std::to_string(v.size()) + " entries, want " +
                            arg["count"].dump());
      }
    }
    if (arg.contains("equals_log_count")) {
      if (log_.empty()) throw ScenarioError("no simopac_log endpoint");
      auto type = arg["equals_log_count"].get<std::string>();
      auto n = count_log_entries(log_, type);
      if (!v.is_number_unsigned() || v.get<std::size_t>() != n) {
        throw ScenarioError(ptr.to_string() + " is " + v.dump() + " but log has " + std::to_string(n) + " " +
                            type + " lines");
      }
    }
    return method + " " + path + " -> " + std::to_string(reply.status) + " " + v.dump();
  }

  Options opts_;
  std::string device_, tagsim_, vitals_, simopac_;
  std::filesystem::path log_;
  json credentials_;
  std::map<std::string, std::string> tokens_;
  std::unique_ptr<rfid::RemoteReader> reader_;
  std::unique_ptr<net::TcpStream> vitals_stream_;
};

}  // namespace

std::size_t count_log_entries(const std::filesystem::path& log, const std::string& type) {
  std::ifstream in(log);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    if (j.value("type", std::string()) == type) ++n;
  }
  return n;
}

json to_json(const Report& r) {
  json steps = json::array();
  for (const auto& s : r.steps) {
    steps.push_back({{"index", s.index}, {"kind", s.kind}, {"ok", s.ok}, {"detail", s.detail},
                     {"elapsed_ms", s.elapsed_ms}});
  }
  return {{"name", r.name},
          {"passed", r.passed},
          {"failed_step", r.failed_step ? json(*r.failed_step) : json(nullptr)},
          {"steps", steps},
          {"total_ms", r.total_ms}};
}

json to_json_untimed(const Report& r) {
  auto j = to_json(r);
  j.erase("total_ms");
  for (auto& s : j["steps"]) s.erase("elapsed_ms");
  return j;
}

Report run(const json& script, const Options& options) {
  Report report;
  report.name = script.value("name", std::string());
  auto t0 = steady::now();
  Context ctx(script, options);
  const auto& steps = script.at("steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& step = steps[i];
    StepReport sr;
    sr.index = i;
    auto ts = steady::now();
    try {
      if (!step.is_object() || step.size() != 1) throw ScenarioError("step must have exactly one kind");
      sr.kind = step.begin().key();
      sr.detail = ctx.run_step(sr.kind, step.begin().value());
      sr.ok = true;
    } catch (const std::exception& e) {
      sr.detail = e.what();
    }
    sr.elapsed_ms = ms_since(ts);
    report.steps.push_back(sr);
    if (!sr.ok) {
      report.failed_step = i;
      break;
    }
  }
  report.passed = !report.failed_step;
  report.total_ms = ms_since(t0);
  return report;
}

Report run_file(const std::filesystem::path& path, Options options) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot read " + path.string());
  json script;
  try {
    script = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
  if (options.base_dir.empty()) options.base_dir = path.parent_path();
  return run(script, options);
}

}  // namespace cipdev::scenario
