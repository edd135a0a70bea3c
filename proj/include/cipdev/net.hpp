#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include "cipdev/bytes.hpp"

namespace cipdev::net {

enum class NetErrorCode { PortInUse, ConnectFailed, Timeout, Closed, Io };

const char* to_string(NetErrorCode code);

class NetError : public std::runtime_error {
 public:
  NetError(NetErrorCode code, const std::string& detail);
  NetErrorCode code() const { return code_; }

 private:
  NetErrorCode code_;
};

using Millis = std::chrono::milliseconds;

class TcpStream {
 public:
  TcpStream() = default;
  TcpStream(int fd, std::string peer_address);
  ~TcpStream();
  TcpStream(TcpStream&& other) noexcept;
  TcpStream& operator=(TcpStream&& other) noexcept;
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;

  static TcpStream connect(const std::string& host, std::uint16_t port, Millis timeout);

  // Returns 0 on orderly close; throws NetError(Timeout) when nothing arrives.
  std::size_t read_some(std::uint8_t* buf, std::size_t len, Millis timeout);
  void write_all(ByteView data);
  void write_all(const std::string& data) {
    write_all(ByteView(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
  }
  void shutdown();

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  const std::string& peer_address() const { return peer_; }

 private:
  void close();

  int fd_ = -1;
  std::string peer_;
};

// Newline-delimited reads on top of a stream.
class LineReader {
 public:
  explicit LineReader(TcpStream& stream) : stream_(stream) {}
  // nullopt on orderly close. The trailing "\n" (and "\r") is stripped.
  std::optional<std::string> next(Millis timeout);

 private:
  TcpStream& stream_;
  std::string buffer_;
};

class TcpListener {
 public:
  TcpListener() = default;
  ~TcpListener();
  TcpListener(TcpListener&& other) noexcept;
  TcpListener& operator=(TcpListener&& other) noexcept;

  // port 0 binds an ephemeral port. Throws NetError(PortInUse).
  static TcpListener bind(const std::string& host, std::uint16_t port);

  std::optional<TcpStream> accept(Millis timeout);
  std::uint16_t port() const { return port_; }
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// SO_REUSEADDR only, so a second listener on a taken port fails to bind.
void set_listener_options(int fd);

// Accept loop plus one thread per connection. Handlers should poll `stopping`
// between short reads; stop() also shuts their sockets down.
class TcpServer {
 public:
  using Handler = std::function<void(TcpStream&, const std::atomic<bool>& stopping)>;

  TcpServer(const std::string& host, std::uint16_t port, Handler handler);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return listener_.port(); }
  void stop();

 private:
  struct Connection {
    TcpStream stream;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void reap(bool all);

  TcpListener listener_;
  Handler handler_;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::list<Connection> connections_;
  std::thread acceptor_;
};

}  // namespace cipdev::net
