#include "cipdev/vitals.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace cipdev::vitals {
namespace {

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* to_string(Kind kind) {
  switch (kind) {
    case Kind::HR: return "HR";
    case Kind::TEMP: return "TEMP";
    case Kind::SYS: return "SYS";
    case Kind::DIA: return "DIA";
  }
  return "?";
}

const char* unit_of(Kind kind) {
  switch (kind) {
    case Kind::HR: return "bpm";
    case Kind::TEMP: return "C";
    case Kind::SYS:
    case Kind::DIA: return "mmHg";
  }
  return "";
}

std::optional<Kind> kind_from_string(const std::string& s) {
  for (auto k : kAllKinds) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

const char* to_string(VitalsErrorCode code) {
  switch (code) {
    case VitalsErrorCode::ParseError: return "ParseError";
    case VitalsErrorCode::UnknownVitalType: return "UnknownVitalType";
    case VitalsErrorCode::NonFiniteValue: return "NonFiniteValue";
    case VitalsErrorCode::MissingThreshold: return "MissingThreshold";
    case VitalsErrorCode::EmptyWindow: return "EmptyWindow";
    case VitalsErrorCode::MixedKinds: return "MixedKinds";
    case VitalsErrorCode::InvalidThresholds: return "InvalidThresholds";
  }
  return "Unknown";
}

VitalsError::VitalsError(VitalsErrorCode code, const std::string& detail, std::size_t position)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code),
      position_(position) {}

VitalSample parse_vital_line(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> tokens;
  for (std::string t; in >> t;) tokens.push_back(t);

  if (tokens.empty() || tokens[0] != "VITAL") {
    throw VitalsError(VitalsErrorCode::ParseError, "expected VITAL", 0);
  }
  if (tokens.size() >= 3 && !kind_from_string(tokens[2])) {
    throw VitalsError(VitalsErrorCode::UnknownVitalType, tokens[2]);
  }
  if (tokens.size() != 6) {
    throw VitalsError(VitalsErrorCode::ParseError, "expected 6 fields", std::min<std::size_t>(tokens.size(), 6));
  }

  VitalSample s;
  s.device_id = tokens[1];
  s.kind = *kind_from_string(tokens[2]);

  const std::string& value = tokens[3];
  char* end = nullptr;
  s.value = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size()) {
    throw VitalsError(VitalsErrorCode::ParseError, "bad value", 3);
  }
  if (!std::isfinite(s.value)) throw VitalsError(VitalsErrorCode::NonFiniteValue, value);
  s.unit = tokens[4];

  const std::string& ts = tokens[5];
  auto res = std::from_chars(ts.data(), ts.data() + ts.size(), s.timestamp);
  if (res.ec != std::errc() || res.ptr != ts.data() + ts.size() || s.timestamp < 0) {
    throw VitalsError(VitalsErrorCode::ParseError, "bad timestamp", 5);
  }
  return s;
}

std::string format_vital_line(const VitalSample& sample) {
  return "VITAL " + sample.device_id + " " + to_string(sample.kind) + " " +
         format_number(sample.value) + " " + (sample.unit.empty() ? unit_of(sample.kind) : sample.unit) +
         " " + std::to_string(sample.timestamp);
}

Thresholds Thresholds::defaults() {
  Thresholds t;
  t.set(Kind::HR, {40, 150});
  t.set(Kind::TEMP, {35.0, 38.0});
  t.set(Kind::SYS, {90, 180});
  t.set(Kind::DIA, {50, 110});
  return t;
}

Thresholds Thresholds::from_json(const nlohmann::json& j, Thresholds base) {
  if (!j.is_object()) throw VitalsError(VitalsErrorCode::InvalidThresholds, "expected object");
  for (const auto& [key, band] : j.items()) {
    auto kind = kind_from_string(key);
    if (!kind) throw VitalsError(VitalsErrorCode::UnknownVitalType, key);
    base.set(*kind, {band.at("low").get<double>(), band.at("high").get<double>()});
  }
  return base;
}

void Thresholds::set(Kind kind, Band band) {
  if (!(band.low < band.high)) {
    throw VitalsError(VitalsErrorCode::InvalidThresholds, std::string(to_string(kind)) + ": low must be < high");
  }
  bands_[kind] = band;
}

std::optional<Band> Thresholds::get(Kind kind) const {
  auto it = bands_.find(kind);
  if (it == bands_.end()) return std::nullopt;
  return it->second;
}

const char* to_string(Classification c) {
  switch (c) {
    case Classification::Normal: return "Normal";
    case Classification::AbnormalLow: return "AbnormalLow";
    case Classification::AbnormalHigh: return "AbnormalHigh";
  }
  return "?";
}

Classification evaluate(const VitalSample& sample, const Thresholds& thresholds) {
  auto band = thresholds.get(sample.kind);
  if (!band) throw VitalsError(VitalsErrorCode::MissingThreshold, to_string(sample.kind));
  if (sample.value < band->low) return Classification::AbnormalLow;
  if (sample.value > band->high) return Classification::AbnormalHigh;
  return Classification::Normal;
}

BiometricResult summarize(std::uint64_t serial, const std::vector<VitalSample>& samples) {
  if (samples.empty()) throw VitalsError(VitalsErrorCode::EmptyWindow);
  BiometricResult r;
  r.serial = serial;
  r.kind = samples.front().kind;
  r.count = samples.size();
  r.min = r.max = samples.front().value;
  r.window_start = r.window_end = samples.front().timestamp;
  std::vector<double> values;
  values.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.kind != r.kind) throw VitalsError(VitalsErrorCode::MixedKinds);
    r.min = std::min(r.min, s.value);
    r.max = std::max(r.max, s.value);
    r.window_start = std::min(r.window_start, s.timestamp);
    r.window_end = std::max(r.window_end, s.timestamp);
    values.push_back(s.value);
  }
  // Sorted so the sum, and the mean, don't depend on arrival order.
  std::sort(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  // Clamp so floating rounding can't push the mean outside [min, max].
  r.mean = std::clamp(sum / static_cast<double>(samples.size()), r.min, r.max);
  return r;
}

std::vector<BiometricResult> WindowAccumulator::add(std::uint64_t serial, const VitalSample& sample) {
  if (serial_ != serial) {
    samples_.clear();
    serial_ = serial;
  }
  samples_.push_back(sample);
  if (samples_.size() < size_) return {};

  std::vector<BiometricResult> results;
  for (auto kind : kAllKinds) {
    std::vector<VitalSample> of_kind;
    std::copy_if(samples_.begin(), samples_.end(), std::back_inserter(of_kind),
                 [kind](const VitalSample& s) { return s.kind == kind; });
    if (!of_kind.empty()) results.push_back(summarize(serial, of_kind));
  }
  samples_.clear();
  return results;
}

void WindowAccumulator::reset() {
  samples_.clear();
  serial_.reset();
}

void to_json(nlohmann::json& j, const VitalSample& s) {
  j = nlohmann::json{{"device_id", s.device_id},
                     {"kind", to_string(s.kind)},
                     {"value", s.value},
                     {"unit", s.unit.empty() ? unit_of(s.kind) : s.unit},
                     {"timestamp", s.timestamp}};
}

void from_json(const nlohmann::json& j, VitalSample& s) {
  s.device_id = j.at("device_id").get<std::string>();
  auto kind = kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw VitalsError(VitalsErrorCode::UnknownVitalType, j.at("kind").dump());
  s.kind = *kind;
  s.value = j.at("value").get<double>();
  s.unit = j.value("unit", std::string(unit_of(s.kind)));
  s.timestamp = j.at("timestamp").get<std::int64_t>();
}

void to_json(nlohmann::json& j, const BiometricResult& r) {
  j = nlohmann::json{{"serial", r.serial},
                     {"kind", to_string(r.kind)},
                     {"window_start", r.window_start},
                     {"window_end", r.window_end},
                     {"count", r.count},
                     {"min", r.min},
                     {"max", r.max},
                     {"mean", r.mean}};
}

void from_json(const nlohmann::json& j, BiometricResult& r) {
  r.serial = j.at("serial").get<std::uint64_t>();
  auto kind = kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw VitalsError(VitalsErrorCode::UnknownVitalType, j.at("kind").dump());
  r.kind = *kind;
  r.window_start = j.at("window_start").get<std::int64_t>();
  r.window_end = j.at("window_end").get<std::int64_t>();
  r.count = j.at("count").get<std::size_t>();
  r.min = j.at("min").get<double>();
  r.max = j.at("max").get<double>();
  r.mean = j.at("mean").get<double>();
}

}  // namespace cipdev::vitals
