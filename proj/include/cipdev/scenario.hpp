#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace cipdev::scenario {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "host:port" strings, plus the log path for log_count checks. Any of these
// overrides what the script itself names.
struct Endpoints {
  std::optional<std::string> device;
  std::optional<std::string> tagsim;
  std::optional<std::string> vitals;
  std::optional<std::string> simopac;
  std::optional<std::filesystem::path> simopac_log;
};

struct Options {
  Endpoints endpoints;
  std::filesystem::path base_dir;  // card files resolve against this
  int default_wait_ms = 5000;
  int poll_ms = 25;
};

struct StepReport {
  std::size_t index = 0;
  std::string kind;
  bool ok = false;
  std::string detail;
  double elapsed_ms = 0;
};

struct Report {
  std::string name;
  bool passed = false;
  std::optional<std::size_t> failed_step;
  std::vector<StepReport> steps;
  double total_ms = 0;
};

nlohmann::json to_json(const Report& r);
// Same report with every timing field removed.
nlohmann::json to_json_untimed(const Report& r);

// Runs steps in order and stops at the first failure.
Report run(const nlohmann::json& script, const Options& options);
Report run_file(const std::filesystem::path& path, Options options);

// Lines of the given type in a JSON-lines log. Unparseable lines are skipped.
std::size_t count_log_entries(const std::filesystem::path& log, const std::string& type);

}  // namespace cipdev::scenario
