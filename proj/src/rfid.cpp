#include "cipdev/rfid.hpp"

#include <algorithm>

#include "cipdev/cip.hpp"
#include "cipdev/crc16.hpp"

namespace cipdev::rfid {

const char* to_string(RfidErrorCode code) {
  switch (code) {
    case RfidErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case RfidErrorCode::TagNotInField: return "TagNotInField";
    case RfidErrorCode::BlockOutOfRange: return "BlockOutOfRange";
    case RfidErrorCode::BadLength: return "BadLength";
    case RfidErrorCode::ImageTooLarge: return "ImageTooLarge";
    case RfidErrorCode::DuplicateTag: return "DuplicateTag";
    case RfidErrorCode::UnknownCommand: return "UnknownCommand";
    case RfidErrorCode::LinkError: return "LinkError";
  }
  return "Unknown";
}

RfidError::RfidError(RfidErrorCode code, const std::string& detail)
    : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                        : std::string(to_string(code)) + ": " + detail),
      code_(code) {}

RfidErrorCode error_for_status(Status status) {
  switch (status) {
    case Status::TagNotInField: return RfidErrorCode::TagNotInField;
    case Status::BlockOutOfRange: return RfidErrorCode::BlockOutOfRange;
    case Status::BadLength: return RfidErrorCode::BadLength;
    case Status::DuplicateTag: return RfidErrorCode::DuplicateTag;
    case Status::UnknownCommand: return RfidErrorCode::UnknownCommand;
    case Status::Ok: break;
  }
  return RfidErrorCode::LinkError;
}

Status status_for_error(RfidErrorCode code) {
  switch (code) {
    case RfidErrorCode::TagNotInField: return Status::TagNotInField;
    case RfidErrorCode::BlockOutOfRange: return Status::BlockOutOfRange;
    case RfidErrorCode::DuplicateTag: return Status::DuplicateTag;
    case RfidErrorCode::UnknownCommand: return Status::UnknownCommand;
    default: return Status::BadLength;
  }
}

Bytes frame_encode(std::uint8_t command, ByteView payload) {
  if (payload.size() > kMaxPayload) throw RfidError(RfidErrorCode::PayloadTooLarge);
  Bytes out;
  out.reserve(payload.size() + kFrameOverhead);
  out.push_back(kSof);
  out.push_back(static_cast<std::uint8_t>(payload.size()));
  out.push_back(command);
  out.insert(out.end(), payload.begin(), payload.end());
  put_u16_be(out, compute_crc16(ByteView(out).subspan(1)));
  out.push_back(kEof);
  return out;
}

FrameDecodeResult frame_decode(ByteView stream) {
  FrameDecodeResult result;
  auto sof = std::find(stream.begin(), stream.end(), kSof);
  const std::size_t skip = static_cast<std::size_t>(sof - stream.begin());
  result.consumed = skip;
  ByteView rest = stream.subspan(skip);
  if (rest.size() < 2) return result;

  const std::size_t len = rest[1];
  const std::size_t total = len + kFrameOverhead;
  if (rest.size() < total) return result;

  if (rest[total - 1] != kEof) {
    result.status = FrameStatus::BadDelimiter;
    result.consumed = skip + 1;
    return result;
  }
  const std::uint16_t stored = get_u16_be(rest.subspan(3 + len, 2));
  if (stored != compute_crc16(rest.subspan(1, 2 + len))) {
    result.status = FrameStatus::CrcError;
    result.consumed = skip + 1;
    return result;
  }
  result.status = FrameStatus::Ok;
  result.frame.command = rest[2];
  result.frame.payload.assign(rest.begin() + 3, rest.begin() + 3 + static_cast<std::ptrdiff_t>(len));
  result.consumed = skip + total;
  return result;
}

std::optional<Frame> FrameReader::next(bool at_eof) {
  while (true) {
    auto r = frame_decode(buffer_);
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(r.consumed));
    switch (r.status) {
      case FrameStatus::Ok:
        return std::move(r.frame);
      case FrameStatus::CrcError:
      case FrameStatus::BadDelimiter:
        ++errors_;
        continue;
      case FrameStatus::Incomplete:
        if (at_eof && !buffer_.empty()) {
          buffer_.erase(buffer_.begin());
          continue;
        }
        return std::nullopt;
    }
  }
}

void TagField::add_tag(std::uint64_t uid, ByteView initial_image) {
  if (initial_image.size() > kTagCapacity) throw RfidError(RfidErrorCode::ImageTooLarge);
  std::lock_guard lk(mu_);
  if (tags_.count(uid)) throw RfidError(RfidErrorCode::DuplicateTag);
  TagMemory tag;
  tag.uid = uid;
  for (std::size_t i = 0; i < initial_image.size(); ++i) {
    tag.blocks[i / kBlockSize][i % kBlockSize] = initial_image[i];
  }
  tags_.emplace(uid, tag);
  events_.push_back({FieldEvent::Kind::Enter, uid, clock_(), events_.size()});
}

void TagField::remove_tag(std::uint64_t uid) {
  std::lock_guard lk(mu_);
  if (tags_.erase(uid) == 0) throw RfidError(RfidErrorCode::TagNotInField);
  events_.push_back({FieldEvent::Kind::Leave, uid, clock_(), events_.size()});
}

bool TagField::contains(std::uint64_t uid) const {
  std::lock_guard lk(mu_);
  return tags_.count(uid) != 0;
}

std::vector<std::uint64_t> TagField::inventory() {
  std::lock_guard lk(mu_);
  std::vector<std::uint64_t> uids;
  uids.reserve(tags_.size());
  for (const auto& [uid, _] : tags_) uids.push_back(uid);  // map keeps them sorted
  return uids;
}

Block TagField::read_block(std::uint64_t uid, std::size_t index) {
  std::lock_guard lk(mu_);
  auto it = tags_.find(uid);
  if (it == tags_.end()) throw RfidError(RfidErrorCode::TagNotInField);
  if (index >= kBlockCount) throw RfidError(RfidErrorCode::BlockOutOfRange);
  return it->second.blocks[index];
}

void TagField::write_block(std::uint64_t uid, std::size_t index, ByteView data) {
  std::lock_guard lk(mu_);
  auto it = tags_.find(uid);
  if (it == tags_.end()) throw RfidError(RfidErrorCode::TagNotInField);
  if (index >= kBlockCount) throw RfidError(RfidErrorCode::BlockOutOfRange);
  if (data.size() != kBlockSize) throw RfidError(RfidErrorCode::BadLength);
  std::copy(data.begin(), data.end(), it->second.blocks[index].begin());
}

std::vector<FieldEvent> TagField::events() const {
  std::lock_guard lk(mu_);
  return events_;
}

Bytes read_full_card(TagReader& reader, std::uint64_t uid) {
  Bytes image;
  std::size_t want = cipdev::kCipMaxImage;
  std::size_t block = 0;
  while (image.size() < want && block < kBlockCount) {
    auto data = reader.read_block(uid, block++);
    image.insert(image.end(), data.begin(), data.end());
    auto len = cip_image_length(image);
    if (len.state == CipImageLength::State::Known) {
      want = len.bytes;
    } else if (len.state == CipImageLength::State::Invalid) {
      return image;
    }
  }
  if (image.size() > want) image.resize(want);
  return image;
}

void write_full_card(TagReader& reader, std::uint64_t uid, ByteView image) {
  if (image.size() > kTagCapacity) throw RfidError(RfidErrorCode::ImageTooLarge);
  for (std::size_t offset = 0; offset < image.size(); offset += kBlockSize) {
    Block block{};
    const std::size_t n = std::min(kBlockSize, image.size() - offset);
    std::copy_n(image.begin() + static_cast<std::ptrdiff_t>(offset), n, block.begin());
    reader.write_block(uid, offset / kBlockSize, block);
  }
}

}  // namespace cipdev::rfid
