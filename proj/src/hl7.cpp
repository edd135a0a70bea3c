#include "cipdev/hl7.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <thread>

#include "cipdev/net.hpp"

namespace cipdev::hl7 {
namespace {

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      return out;
    }
    out.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

Segment msh(const std::string& sender_app, const std::string& sender_facility,
            const std::string& receiver_app, const std::string& receiver_facility,
            std::int64_t now, const std::string& type, const std::string& control_id) {
  return {"MSH", kEncodingChars, sender_app, sender_facility, receiver_app, receiver_facility,
          format_ts(now), "", type, control_id, "P", kVersion};
}

}  // namespace

const char* to_string(Hl7ErrorCode code) {
  switch (code) {
    case Hl7ErrorCode::MissingMsh: return "MissingMsh";
    case Hl7ErrorCode::EmptySegment: return "EmptySegment";
    case Hl7ErrorCode::InvalidField: return "InvalidField";
    case Hl7ErrorCode::BadFraming: return "BadFraming";
    case Hl7ErrorCode::Incomplete: return "Incomplete";
    case Hl7ErrorCode::SerialMismatch: return "SerialMismatch";
    case Hl7ErrorCode::MalformedAck: return "MalformedAck";
    case Hl7ErrorCode::ControlIdMismatch: return "ControlIdMismatch";
    case Hl7ErrorCode::Timeout: return "Timeout";
  }
  return "Unknown";
}

Hl7Error::Hl7Error(Hl7ErrorCode code, const std::string& detail)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code) {}

std::string Hl7Message::message_type() const {
  if (segments.empty() || segments[0].size() <= 8) return {};
  return segments[0][8];
}

std::string Hl7Message::control_id() const {
  if (segments.empty() || segments[0].size() <= 9) return {};
  return segments[0][9];
}

const Segment* Hl7Message::find(std::string_view id) const {
  for (const auto& seg : segments) {
    if (!seg.empty() && seg[0] == id) return &seg;
  }
  return nullptr;
}

std::vector<const Segment*> Hl7Message::find_all(std::string_view id) const {
  std::vector<const Segment*> out;
  for (const auto& seg : segments) {
    if (!seg.empty() && seg[0] == id) out.push_back(&seg);
  }
  return out;
}

bool is_plain_field(std::string_view text) {
  return text.find_first_of("|^~\\&\r") == std::string_view::npos;
}

std::string encode_hl7(const Hl7Message& msg) {
  if (msg.segments.empty() || msg.segments[0].empty() || msg.segments[0][0] != "MSH") {
    throw Hl7Error(Hl7ErrorCode::MissingMsh);
  }
  std::string out;
  for (const auto& seg : msg.segments) {
    if (seg.empty() || seg[0].empty()) throw Hl7Error(Hl7ErrorCode::EmptySegment);
    for (std::size_t i = 0; i < seg.size(); ++i) {
      if (seg[i].find_first_of("|\r") != std::string::npos) {
        throw Hl7Error(Hl7ErrorCode::InvalidField, seg[0] + "-" + std::to_string(i));
      }
      if (i) out.push_back('|');
      out += seg[i];
    }
    out.push_back('\r');
  }
  return out;
}

Hl7Message parse_hl7(std::string_view text) {
  if (text.substr(0, 4) != "MSH|") throw Hl7Error(Hl7ErrorCode::MissingMsh);
  auto lines = split(text, '\r');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  Hl7Message msg;
  for (const auto& line : lines) {
    if (line.empty()) throw Hl7Error(Hl7ErrorCode::EmptySegment);
    msg.segments.push_back(split(line, '|'));
  }
  if (msg.segments[0].size() < 2 || msg.segments[0][1] != kEncodingChars) {
    throw Hl7Error(Hl7ErrorCode::InvalidField, "MSH-2");
  }
  return msg;
}

Bytes mllp_wrap(std::string_view text) {
  Bytes out;
  out.reserve(text.size() + 3);
  out.push_back(kMllpStart);
  out.insert(out.end(), text.begin(), text.end());
  out.push_back(kMllpEnd);
  out.push_back(kMllpCr);
  return out;
}

std::string mllp_unwrap(ByteView bytes) {
  if (bytes.empty()) throw Hl7Error(Hl7ErrorCode::Incomplete);
  if (bytes[0] != kMllpStart) throw Hl7Error(Hl7ErrorCode::BadFraming, "missing start byte");
  for (std::size_t i = 1; i < bytes.size(); ++i) {
    if (bytes[i] == kMllpStart) throw Hl7Error(Hl7ErrorCode::BadFraming, "nested start byte");
    if (bytes[i] != kMllpEnd) continue;
    if (i + 1 == bytes.size()) throw Hl7Error(Hl7ErrorCode::Incomplete);
    if (bytes[i + 1] != kMllpCr) throw Hl7Error(Hl7ErrorCode::BadFraming, "missing trailing CR");
    if (i + 2 != bytes.size()) throw Hl7Error(Hl7ErrorCode::BadFraming, "trailing bytes");
    return std::string(bytes.begin() + 1, bytes.begin() + static_cast<std::ptrdiff_t>(i));
  }
  throw Hl7Error(Hl7ErrorCode::Incomplete);
}

std::optional<std::string> MllpReader::next() {
  if (buffer_.empty()) return std::nullopt;
  if (buffer_[0] != kMllpStart) throw Hl7Error(Hl7ErrorCode::BadFraming, "missing start byte");
  for (std::size_t i = 1; i + 1 < buffer_.size(); ++i) {
    if (buffer_[i] == kMllpEnd) {
      if (buffer_[i + 1] != kMllpCr) throw Hl7Error(Hl7ErrorCode::BadFraming, "missing trailing CR");
      std::string text(buffer_.begin() + 1, buffer_.begin() + static_cast<std::ptrdiff_t>(i));
      buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(i + 2));
      return text;
    }
  }
  return std::nullopt;
}

std::string next_control_id() {
  static std::atomic<std::uint64_t> counter{static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count())};
  return std::to_string(counter.fetch_add(1) + 1);
}

std::string format_ts(std::int64_t unix_seconds) {
  std::time_t t = static_cast<std::time_t>(unix_seconds);
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d%02d%02d%02d%02d%02d", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

std::int64_t parse_ts(std::string_view ts) {
  if (ts.size() != 14 || ts.find_first_not_of("0123456789") != std::string_view::npos) {
    throw Hl7Error(Hl7ErrorCode::InvalidField, "timestamp");
  }
  auto num = [&](std::size_t pos, std::size_t len) {
    return std::stoi(std::string(ts.substr(pos, len)));
  };
  std::tm tm{};
  tm.tm_year = num(0, 4) - 1900;
  tm.tm_mon = num(4, 2) - 1;
  tm.tm_mday = num(6, 2);
  tm.tm_hour = num(8, 2);
  tm.tm_min = num(10, 2);
  tm.tm_sec = num(12, 2);
  return static_cast<std::int64_t>(::timegm(&tm));
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

Hl7Message build_oru(const CipCard& card, const vitals::BiometricResult& result,
                     const std::string& control_id, std::int64_t now) {
  if (result.serial != card.serial) {
    throw Hl7Error(Hl7ErrorCode::SerialMismatch,
                   std::to_string(result.serial) + " != " + std::to_string(card.serial));
  }
  if (control_id.empty() || !is_plain_field(control_id)) {
    throw Hl7Error(Hl7ErrorCode::InvalidField, "control id");
  }
  const std::string kind = vitals::to_string(result.kind);
  const std::string unit = vitals::unit_of(result.kind);
  const std::string end_ts = format_ts(result.window_end);

  Hl7Message msg;
  msg.segments.push_back(msh("CIPDEV", "DEVICE", "SIMOPAC", "EHR", now, "ORU^R01", control_id));
  msg.segments.push_back({"PID", "1", "", std::to_string(card.serial)});
  msg.segments.push_back({"OBR", "1", control_id, "", "VITALS^" + kind, "", "",
                          format_ts(result.window_start), end_ts});
  const std::pair<const char*, double> stats[] = {
      {"min", result.min}, {"max", result.max}, {"mean", result.mean}};
  int set_id = 1;
  for (const auto& [name, value] : stats) {
    msg.segments.push_back({"OBX", std::to_string(set_id++), "NM", kind + "^" + name, "",
                            format_value(value), unit, "", "", "", "", "F", "", "", end_ts});
  }
  return msg;
}

const char* to_string(AckCode code) {
  switch (code) {
    case AckCode::AA: return "AA";
    case AckCode::AE: return "AE";
    case AckCode::AR: return "AR";
  }
  return "AE";
}

Hl7Message build_ack(AckCode code, const std::string& acked_control_id,
                     const std::string& ack_control_id, std::int64_t now) {
  for (const auto* id : {&acked_control_id, &ack_control_id}) {
    if (id->empty() || !is_plain_field(*id)) throw Hl7Error(Hl7ErrorCode::InvalidField, "control id");
  }
  Hl7Message msg;
  msg.segments.push_back(msh("SIMOPAC", "EHR", "CIPDEV", "DEVICE", now, "ACK", ack_control_id));
  msg.segments.push_back({"MSA", to_string(code), acked_control_id});
  return msg;
}

AckStatus parse_ack(const Hl7Message& ack) {
  const Segment* msa = ack.find("MSA");
  if (msa == nullptr || msa->size() < 3) throw Hl7Error(Hl7ErrorCode::MalformedAck, "no MSA");
  AckStatus status;
  const auto& code = (*msa)[1];
  if (code == "AA" || code == "CA") {
    status.code = AckCode::AA;
  } else if (code == "AE" || code == "CE") {
    status.code = AckCode::AE;
  } else if (code == "AR" || code == "CR") {
    status.code = AckCode::AR;
  } else {
    throw Hl7Error(Hl7ErrorCode::MalformedAck, "MSA-1 " + code);
  }
  status.control_id = (*msa)[2];
  return status;
}

AckStatus send_and_await_ack(const Endpoint& endpoint, const Hl7Message& msg,
                             const RetryPolicy& policy, int* attempts_used) {
  const Bytes wire = mllp_wrap(encode_hl7(msg));
  const std::string control_id = msg.control_id();
  std::string last_error = "no attempts";
  const int attempts = std::max(1, policy.attempts);

  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempts_used) *attempts_used = attempt + 1;
    try {
      auto stream = net::TcpStream::connect(endpoint.host, endpoint.port,
                                            net::Millis(policy.connect_timeout_ms));
      stream.write_all(wire);
      MllpReader reader;
      const auto deadline =
          std::chrono::steady_clock::now() + std::chrono::milliseconds(policy.ack_timeout_ms);
      while (true) {
        if (auto text = reader.next()) {
          AckStatus status = parse_ack(parse_hl7(*text));
          if (status.control_id != control_id) {
            throw Hl7Error(Hl7ErrorCode::ControlIdMismatch,
                           "expected " + control_id + ", got " + status.control_id);
          }
          return status;
        }
        auto left = std::chrono::ceil<net::Millis>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw net::NetError(net::NetErrorCode::Timeout, "ack");
        std::uint8_t buf[1024];
        std::size_t n = stream.read_some(buf, sizeof(buf), left);
        if (n == 0) throw net::NetError(net::NetErrorCode::Closed, "peer closed before ack");
        reader.feed(ByteView(buf, n));
      }
    } catch (const net::NetError& e) {
      last_error = e.what();
    }
    if (attempt + 1 < attempts) {
      const auto idx = static_cast<std::size_t>(attempt);
      int delay = policy.backoff_ms.empty()
                      ? 0
                      : policy.backoff_ms[std::min(idx, policy.backoff_ms.size() - 1)];
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
  }
  throw Hl7Error(Hl7ErrorCode::Timeout,
                 "after " + std::to_string(attempts) + " attempts: " + last_error);
}

}  // namespace cipdev::hl7
