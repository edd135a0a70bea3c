#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "cipdev/net.hpp"
#include "cipdev/rfid.hpp"

namespace cipdev::rfid {

// Reply payload for a single request frame against a field.
Bytes handle_reader_command(TagField& field, const Frame& request);

// Serves a TagField over the framed reader protocol.
class TagSimServer {
 public:
  TagSimServer(TagField& field, const std::string& host, std::uint16_t port);
  std::uint16_t port() const { return server_.port(); }
  void stop() { server_.stop(); }

 private:
  TagField& field_;
  net::TcpServer server_;
};

// Host side of the reader link. One connection, requests serialized.
class RemoteReader : public TagReader {
 public:
  RemoteReader(std::string host, std::uint16_t port,
               net::Millis timeout = net::Millis(2000));

  std::vector<std::uint64_t> inventory() override;
  Block read_block(std::uint64_t uid, std::size_t index) override;
  void write_block(std::uint64_t uid, std::size_t index, ByteView data) override;

  // Simulator control commands.
  void add_tag(std::uint64_t uid, ByteView image = {});
  void remove_tag(std::uint64_t uid);

 private:
  Frame transact(std::uint8_t command, const Bytes& payload);
  Frame transact_once(std::uint8_t command, const Bytes& payload);

  std::string host_;
  std::uint16_t port_;
  net::Millis timeout_;
  std::mutex mu_;
  std::optional<net::TcpStream> stream_;
  FrameReader reader_;
};

}  // namespace cipdev::rfid
