#include "cipdev/tagsim.hpp"

#include <algorithm>

namespace cipdev::rfid {
namespace {

constexpr std::size_t kInlineImageMax = kMaxPayload - 8;
constexpr std::size_t kInventoryMax = (kMaxPayload - 1) / 8;

Bytes status_payload(Status s) { return Bytes{static_cast<std::uint8_t>(s)}; }

Bytes uid_bytes(std::uint64_t uid) {
  Bytes b;
  put_u64_be(b, uid);
  return b;
}

void expect_ok(const Frame& reply) {
  if (reply.payload.size() != 1) throw RfidError(RfidErrorCode::LinkError, "malformed status reply");
  auto status = static_cast<Status>(reply.payload[0]);
  if (status != Status::Ok) throw RfidError(error_for_status(status));
}

}  // namespace

Bytes handle_reader_command(TagField& field, const Frame& request) {
  const auto& p = request.payload;
  try {
    switch (request.command) {
      case kInventory: {
        auto uids = field.inventory();
        if (uids.size() > kInventoryMax) uids.resize(kInventoryMax);
        Bytes out{static_cast<std::uint8_t>(uids.size())};
        for (auto uid : uids) put_u64_be(out, uid);
        return out;
      }
      case kReadBlock: {
        if (p.size() != 9) return status_payload(Status::BadLength);
        auto block = field.read_block(get_u64_be(p), p[8]);
        return Bytes(block.begin(), block.end());
      }
      case kWriteBlock: {
        if (p.size() != 9 + kBlockSize) return status_payload(Status::BadLength);
        field.write_block(get_u64_be(p), p[8], ByteView(p).subspan(9));
        return status_payload(Status::Ok);
      }
      case kFieldAddTag: {
        if (p.size() < 8) return status_payload(Status::BadLength);
        field.add_tag(get_u64_be(p), ByteView(p).subspan(8));
        return status_payload(Status::Ok);
      }
      case kFieldRemoveTag: {
        if (p.size() != 8) return status_payload(Status::BadLength);
        field.remove_tag(get_u64_be(p));
        return status_payload(Status::Ok);
      }
      default:
        return status_payload(Status::UnknownCommand);
    }
  } catch (const RfidError& e) {
    return status_payload(status_for_error(e.code()));
  }
}

TagSimServer::TagSimServer(TagField& field, const std::string& host, std::uint16_t port)
    : field_(field),
      server_(host, port, [this](net::TcpStream& stream, const std::atomic<bool>& stopping) {
        FrameReader frames;
        std::uint8_t buf[1024];
        while (!stopping) {
          std::size_t n;
          try {
            n = stream.read_some(buf, sizeof(buf), net::Millis(100));
          } catch (const net::NetError& e) {
            if (e.code() == net::NetErrorCode::Timeout) continue;
            return;
          }
          if (n == 0) return;
          frames.feed(ByteView(buf, n));
          while (auto frame = frames.next()) {
            stream.write_all(frame_encode(frame->command, handle_reader_command(field_, *frame)));
          }
        }
      }) {}

RemoteReader::RemoteReader(std::string host, std::uint16_t port, net::Millis timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

Frame RemoteReader::transact_once(std::uint8_t command, const Bytes& payload) {
  if (!stream_) {
    stream_ = net::TcpStream::connect(host_, port_, timeout_);
    reader_ = FrameReader{};
  }
  stream_->write_all(frame_encode(command, payload));
  std::uint8_t buf[512];
  while (true) {
    if (auto frame = reader_.next()) {
      if (frame->command != command) continue;  // stale reply
      return *frame;
    }
    std::size_t n = stream_->read_some(buf, sizeof(buf), timeout_);
    if (n == 0) throw net::NetError(net::NetErrorCode::Closed, "reader link closed");
    reader_.feed(ByteView(buf, n));
  }
}

Frame RemoteReader::transact(std::uint8_t command, const Bytes& payload) {
  std::lock_guard lk(mu_);
  for (int attempt = 0;; ++attempt) {
    try {
      return transact_once(command, payload);
    } catch (const net::NetError& e) {
      stream_.reset();
      if (attempt >= 1) throw RfidError(RfidErrorCode::LinkError, e.what());
    }
  }
}

std::vector<std::uint64_t> RemoteReader::inventory() {
  auto reply = transact(kInventory, {});
  const auto& p = reply.payload;
  if (p.empty() || p.size() != 1 + 8 * std::size_t{p[0]}) {
    throw RfidError(RfidErrorCode::LinkError, "malformed inventory reply");
  }
  std::vector<std::uint64_t> uids;
  for (std::size_t i = 0; i < p[0]; ++i) uids.push_back(get_u64_be(ByteView(p).subspan(1 + 8 * i, 8)));
  return uids;
}

Block RemoteReader::read_block(std::uint64_t uid, std::size_t index) {
  if (index > 0xFF) throw RfidError(RfidErrorCode::BlockOutOfRange);
  Bytes payload = uid_bytes(uid);
  payload.push_back(static_cast<std::uint8_t>(index));
  auto reply = transact(kReadBlock, payload);
  if (reply.payload.size() == kBlockSize) {
    Block block;
    std::copy(reply.payload.begin(), reply.payload.end(), block.begin());
    return block;
  }
  expect_ok(reply);
  throw RfidError(RfidErrorCode::LinkError, "empty read reply");
}

void RemoteReader::write_block(std::uint64_t uid, std::size_t index, ByteView data) {
  if (data.size() != kBlockSize) throw RfidError(RfidErrorCode::BadLength);
  if (index > 0xFF) throw RfidError(RfidErrorCode::BlockOutOfRange);
  Bytes payload = uid_bytes(uid);
  payload.push_back(static_cast<std::uint8_t>(index));
  payload.insert(payload.end(), data.begin(), data.end());
  expect_ok(transact(kWriteBlock, payload));
}

void RemoteReader::add_tag(std::uint64_t uid, ByteView image) {
  if (image.size() > kTagCapacity) throw RfidError(RfidErrorCode::ImageTooLarge);
  Bytes payload = uid_bytes(uid);
  const bool inline_image = image.size() <= kInlineImageMax;
  if (inline_image) payload.insert(payload.end(), image.begin(), image.end());
  expect_ok(transact(kFieldAddTag, payload));
  if (!inline_image) write_full_card(*this, uid, image);
}

void RemoteReader::remove_tag(std::uint64_t uid) { expect_ok(transact(kFieldRemoveTag, uid_bytes(uid))); }

}  // namespace cipdev::rfid
