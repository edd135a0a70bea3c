#pragma once

// HL7 v2.5 subset (MSH, PID, OBR, OBX, MSA) with MLLP framing.
//
// A segment is stored as its '|'-split fields with the segment id first. For
// MSH, element 1 holds the encoding characters, so MSH-n lives at index n-1
// and every other XXX-n at index n.

#include <atomic>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cipdev/bytes.hpp"
#include "cipdev/cip.hpp"
#include "cipdev/vitals.hpp"

namespace cipdev::hl7 {

inline constexpr char kEncodingChars[] = "^~\\&";
inline constexpr char kVersion[] = "2.5";
inline constexpr std::uint8_t kMllpStart = 0x0B;
inline constexpr std::uint8_t kMllpEnd = 0x1C;
inline constexpr std::uint8_t kMllpCr = 0x0D;

using Segment = std::vector<std::string>;

struct Hl7Message {
  std::vector<Segment> segments;

  std::string message_type() const;  // MSH-9
  std::string control_id() const;    // MSH-10
  const Segment* find(std::string_view id) const;
  std::vector<const Segment*> find_all(std::string_view id) const;

  bool operator==(const Hl7Message&) const = default;
};

enum class Hl7ErrorCode {
  MissingMsh,
  EmptySegment,
  InvalidField,
  BadFraming,
  Incomplete,
  SerialMismatch,
  MalformedAck,
  ControlIdMismatch,
  Timeout,
};

const char* to_string(Hl7ErrorCode code);

class Hl7Error : public std::runtime_error {
 public:
  Hl7Error(Hl7ErrorCode code, const std::string& detail = {});
  Hl7ErrorCode code() const { return code_; }

 private:
  Hl7ErrorCode code_;
};

// True when the text holds none of | ^ ~ \ & or CR.
bool is_plain_field(std::string_view text);

std::string encode_hl7(const Hl7Message& msg);
Hl7Message parse_hl7(std::string_view text);

Bytes mllp_wrap(std::string_view text);
std::string mllp_unwrap(ByteView bytes);

// Streaming MLLP de-framer for a connection.
class MllpReader {
 public:
  void feed(ByteView data) { buffer_.insert(buffer_.end(), data.begin(), data.end()); }
  // Throws Hl7Error(BadFraming) on bytes outside a start block.
  std::optional<std::string> next();

 private:
  Bytes buffer_;
};

// Unique, strictly increasing decimal control ids for this process.
std::string next_control_id();

// YYYYMMDDHHMMSS, UTC.
std::string format_ts(std::int64_t unix_seconds);
std::int64_t parse_ts(std::string_view ts);

// Two decimals.
std::string format_value(double v);

Hl7Message build_oru(const CipCard& card, const vitals::BiometricResult& result,
                     const std::string& control_id, std::int64_t now);

enum class AckCode { AA, AE, AR };
const char* to_string(AckCode code);

struct AckStatus {
  AckCode code = AckCode::AA;
  std::string control_id;  // MSA-2, the acknowledged message's id
};

Hl7Message build_ack(AckCode code, const std::string& acked_control_id,
                     const std::string& ack_control_id, std::int64_t now);
AckStatus parse_ack(const Hl7Message& ack);

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 4503;
};

struct RetryPolicy {
  int attempts = 3;
  std::vector<int> backoff_ms = {200, 400, 800};
  int ack_timeout_ms = 2000;
  int connect_timeout_ms = 1000;
};

// Sends over a fresh connection per attempt and waits for the MSA. A negative
// ACK is returned as a status; only transport failure exhausts the retries
// (Hl7Error Timeout).
AckStatus send_and_await_ack(const Endpoint& endpoint, const Hl7Message& msg,
                             const RetryPolicy& policy, int* attempts_used = nullptr);

}  // namespace cipdev::hl7
