#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cipdev::vitals {

enum class Kind { HR, TEMP, SYS, DIA };
inline constexpr std::array<Kind, 4> kAllKinds = {Kind::HR, Kind::TEMP, Kind::SYS, Kind::DIA};

const char* to_string(Kind kind);
const char* unit_of(Kind kind);
std::optional<Kind> kind_from_string(const std::string& s);

struct VitalSample {
  std::string device_id;
  Kind kind = Kind::HR;
  double value = 0;
  std::int64_t timestamp = 0;
  std::string unit;  // informational, kind is authoritative

  bool operator==(const VitalSample&) const = default;
};

enum class VitalsErrorCode { ParseError, UnknownVitalType, NonFiniteValue, MissingThreshold,
                             EmptyWindow, MixedKinds, InvalidThresholds };

const char* to_string(VitalsErrorCode code);

class VitalsError : public std::runtime_error {
 public:
  VitalsError(VitalsErrorCode code, const std::string& detail = {}, std::size_t position = 0);
  VitalsErrorCode code() const { return code_; }
  // Token index for ParseError.
  std::size_t position() const { return position_; }

 private:
  VitalsErrorCode code_;
  std::size_t position_;
};

// "VITAL <device_id> <kind> <value> <unit> <timestamp>"
VitalSample parse_vital_line(const std::string& line);
std::string format_vital_line(const VitalSample& sample);

struct Band {
  double low = 0;
  double high = 0;
};

class Thresholds {
 public:
  // HR 40-150 bpm, TEMP 35.0-38.0 C, SYS 90-180 mmHg, DIA 50-110 mmHg.
  static Thresholds defaults();
  // Partial documents override defaults for the kinds they name.
  static Thresholds from_json(const nlohmann::json& j, Thresholds base = defaults());

  void set(Kind kind, Band band);
  void clear(Kind kind) { bands_.erase(kind); }
  std::optional<Band> get(Kind kind) const;

 private:
  std::map<Kind, Band> bands_;
};

enum class Classification { Normal, AbnormalLow, AbnormalHigh };
const char* to_string(Classification c);

// Closed interval: values at either bound are Normal.
Classification evaluate(const VitalSample& sample, const Thresholds& thresholds);

struct BiometricResult {
  std::uint64_t serial = 0;
  Kind kind = Kind::HR;
  std::int64_t window_start = 0;
  std::int64_t window_end = 0;
  std::size_t count = 0;
  double min = 0;
  double max = 0;
  double mean = 0;

  bool operator==(const BiometricResult&) const = default;
};

BiometricResult summarize(std::uint64_t serial, const std::vector<VitalSample>& samples);

// Tumbling window of N samples for one patient; on close, one result per kind
// present, in kind order.
class WindowAccumulator {
 public:
  explicit WindowAccumulator(std::size_t size = 10) : size_(size == 0 ? 1 : size) {}

  std::vector<BiometricResult> add(std::uint64_t serial, const VitalSample& sample);
  void reset();
  std::size_t pending() const { return samples_.size(); }
  std::optional<std::uint64_t> serial() const { return serial_; }

 private:
  std::size_t size_;
  std::optional<std::uint64_t> serial_;
  std::vector<VitalSample> samples_;
};

void to_json(nlohmann::json& j, const VitalSample& s);
void to_json(nlohmann::json& j, const BiometricResult& r);
void from_json(const nlohmann::json& j, VitalSample& s);
void from_json(const nlohmann::json& j, BiometricResult& r);

}  // namespace cipdev::vitals
