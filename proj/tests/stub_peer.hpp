#pragma once

#include <atomic>
#include <functional>

#include "cipdev/hl7.hpp"
#include "cipdev/net.hpp"

namespace {

// MLLP peer that answers each message through `reply` (empty = stay silent).
class StubPeer {
 public:
  explicit StubPeer(std::function<std::string(const cipdev::hl7::Hl7Message&)> reply)
      : reply_(std::move(reply)),
        server_("127.0.0.1", 0, [this](cipdev::net::TcpStream& s, const std::atomic<bool>& stopping) {
          cipdev::hl7::MllpReader reader;
          std::uint8_t buf[2048];
          while (!stopping) {
            std::size_t n;
            try {
              n = s.read_some(buf, sizeof(buf), cipdev::net::Millis(50));
            } catch (const cipdev::net::NetError& e) {
              if (e.code() == cipdev::net::NetErrorCode::Timeout) continue;
              return;
            }
            if (n == 0) return;
            reader.feed(cipdev::ByteView(buf, n));
            while (auto text = reader.next()) {
              ++received;
              auto out = reply_(cipdev::hl7::parse_hl7(*text));
              if (!out.empty()) s.write_all(cipdev::hl7::mllp_wrap(out));
            }
          }
        }) {}

  cipdev::hl7::Endpoint endpoint() const { return {"127.0.0.1", server_.port()}; }
  std::atomic<int> received{0};

 private:
  std::function<std::string(const cipdev::hl7::Hl7Message&)> reply_;
  cipdev::net::TcpServer server_;
};

}  // namespace
