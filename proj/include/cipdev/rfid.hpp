#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cipdev/bytes.hpp"
#include "cipdev/clock.hpp"

namespace cipdev::rfid {

inline constexpr std::size_t kBlockSize = 16;
inline constexpr std::size_t kBlockCount = 32;
inline constexpr std::size_t kTagCapacity = kBlockSize * kBlockCount;
inline constexpr std::size_t kMaxPayload = 255;
inline constexpr std::size_t kFrameOverhead = 6;  // SOF, len, cmd, crc hi, crc lo, EOF

inline constexpr std::uint8_t kSof = 0xAA;
inline constexpr std::uint8_t kEof = 0x55;

enum Command : std::uint8_t {
  kInventory = 0x01,
  kReadBlock = 0x02,
  kWriteBlock = 0x03,
  kFieldAddTag = 0x04,
  kFieldRemoveTag = 0x05,
};

enum class Status : std::uint8_t {
  Ok = 0x00,
  TagNotInField = 0x01,
  BlockOutOfRange = 0x02,
  BadLength = 0x03,
  DuplicateTag = 0x04,
  UnknownCommand = 0x05,
};

enum class RfidErrorCode {
  PayloadTooLarge,
  TagNotInField,
  BlockOutOfRange,
  BadLength,
  ImageTooLarge,
  DuplicateTag,
  UnknownCommand,
  LinkError,
};

const char* to_string(RfidErrorCode code);

class RfidError : public std::runtime_error {
 public:
  explicit RfidError(RfidErrorCode code, const std::string& detail = {});
  RfidErrorCode code() const { return code_; }

 private:
  RfidErrorCode code_;
};

RfidErrorCode error_for_status(Status status);
Status status_for_error(RfidErrorCode code);

// ---- framing ----

struct Frame {
  std::uint8_t command = 0;
  Bytes payload;
  bool operator==(const Frame&) const = default;
};

// SOF | len | cmd | payload | CRC-16(len..payload) big-endian | EOF
Bytes frame_encode(std::uint8_t command, ByteView payload);

enum class FrameStatus { Ok, Incomplete, CrcError, BadDelimiter };

struct FrameDecodeResult {
  FrameStatus status = FrameStatus::Incomplete;
  Frame frame;
  // Bytes the caller may drop: skipped garbage, plus the whole frame on Ok or
  // just the bad SOF on errors (so the scan resumes one byte later).
  std::size_t consumed = 0;
};

FrameDecodeResult frame_decode(ByteView stream);

// Accumulates a byte stream and yields frames, resynchronizing after bad ones.
class FrameReader {
 public:
  void feed(ByteView data) { buffer_.insert(buffer_.end(), data.begin(), data.end()); }

  // With at_eof, a header that can never complete is discarded so later
  // frames in the buffer are still found.
  std::optional<Frame> next(bool at_eof = false);

  std::size_t errors() const { return errors_; }
  std::size_t buffered() const { return buffer_.size(); }

 private:
  Bytes buffer_;
  std::size_t errors_ = 0;
};

// ---- tag memory and the field ----

using Block = std::array<std::uint8_t, kBlockSize>;

struct TagMemory {
  std::uint64_t uid = 0;
  std::array<Block, kBlockCount> blocks{};
};

struct FieldEvent {
  enum class Kind { Enter, Leave } kind;
  std::uint64_t uid;
  std::int64_t timestamp;
  std::uint64_t seq;
};

// What a host sees of a reader: inventory plus block access.
class TagReader {
 public:
  virtual ~TagReader() = default;
  virtual std::vector<std::uint64_t> inventory() = 0;
  virtual Block read_block(std::uint64_t uid, std::size_t index) = 0;
  virtual void write_block(std::uint64_t uid, std::size_t index, ByteView data) = 0;
};

// In-memory tag field. Thread-safe; every operation is serialized.
class TagField : public TagReader {
 public:
  explicit TagField(Clock clock = system_now) : clock_(std::move(clock)) {}

  // Image bytes are copied from block 0 and zero padded.
  void add_tag(std::uint64_t uid, ByteView initial_image = {});
  void remove_tag(std::uint64_t uid);
  bool contains(std::uint64_t uid) const;

  std::vector<std::uint64_t> inventory() override;
  Block read_block(std::uint64_t uid, std::size_t index) override;
  void write_block(std::uint64_t uid, std::size_t index, ByteView data) override;

  std::vector<FieldEvent> events() const;

 private:
  mutable std::mutex mu_;
  Clock clock_;
  std::map<std::uint64_t, TagMemory> tags_;
  std::vector<FieldEvent> events_;
};

// Reads block by block until the self-describing CIP layout says the image is
// complete. An image whose layout can't be followed is returned as read
// (validation belongs to the codec).
Bytes read_full_card(TagReader& reader, std::uint64_t uid);

// Writes from block 0, zero padding the final block.
void write_full_card(TagReader& reader, std::uint64_t uid, ByteView image);

}  // namespace cipdev::rfid
