#include "cipdev/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

namespace cipdev::net {

void set_listener_options(int fd) {
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
}
namespace {

std::string errno_text() { return std::strerror(errno); }

bool wait_fd(int fd, short events, Millis timeout) {
  pollfd p{fd, events, 0};
  while (true) {
    int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) throw NetError(NetErrorCode::Io, "poll: " + errno_text());
    return rc > 0;
  }
}

std::string address_of(const sockaddr_in& addr) {
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof(buf));
  return buf;
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const std::string h = (host.empty() || host == "localhost") ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) == 1) return addr;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw NetError(NetErrorCode::ConnectFailed, "cannot resolve " + host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

}  // namespace

const char* to_string(NetErrorCode code) {
  switch (code) {
    case NetErrorCode::PortInUse: return "PortInUse";
    case NetErrorCode::ConnectFailed: return "ConnectFailed";
    case NetErrorCode::Timeout: return "Timeout";
    case NetErrorCode::Closed: return "Closed";
    case NetErrorCode::Io: return "Io";
  }
  return "Unknown";
}

NetError::NetError(NetErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

TcpStream::TcpStream(int fd, std::string peer_address) : fd_(fd), peer_(std::move(peer_address)) {}

TcpStream::~TcpStream() { close(); }

TcpStream::TcpStream(TcpStream&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), peer_(std::move(other.peer_)) {}

TcpStream& TcpStream::operator=(TcpStream&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
    peer_ = std::move(other.peer_);
  }
  return *this;
}

TcpStream TcpStream::connect(const std::string& host, std::uint16_t port, Millis timeout) {
  sockaddr_in addr = resolve(host, port);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw NetError(NetErrorCode::Io, "socket: " + errno_text());
  TcpStream stream(fd, address_of(addr));

  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc < 0 && errno != EINPROGRESS) {
    throw NetError(NetErrorCode::ConnectFailed, host + ":" + std::to_string(port) + ": " + errno_text());
  }
  if (rc < 0) {
    if (!wait_fd(fd, POLLOUT, timeout)) {
      throw NetError(NetErrorCode::Timeout, "connect " + host + ":" + std::to_string(port));
    }
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      throw NetError(NetErrorCode::ConnectFailed,
                     host + ":" + std::to_string(port) + ": " + std::strerror(err));
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return stream;
}

std::size_t TcpStream::read_some(std::uint8_t* buf, std::size_t len, Millis timeout) {
  if (fd_ < 0) throw NetError(NetErrorCode::Closed, "read on closed stream");
  if (!wait_fd(fd_, POLLIN, timeout)) throw NetError(NetErrorCode::Timeout, "read");
  while (true) {
    ssize_t n = ::recv(fd_, buf, len, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) {
      if (errno == ECONNRESET) return 0;
      throw NetError(NetErrorCode::Io, "recv: " + errno_text());
    }
    return static_cast<std::size_t>(n);
  }
}

void TcpStream::write_all(ByteView data) {
  if (fd_ < 0) throw NetError(NetErrorCode::Closed, "write on closed stream");
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) throw NetError(NetErrorCode::Io, "send: " + errno_text());
    off += static_cast<std::size_t>(n);
  }
}

void TcpStream::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void TcpStream::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

std::optional<std::string> LineReader::next(Millis timeout) {
  while (true) {
    auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    std::uint8_t chunk[1024];
    std::size_t n = stream_.read_some(chunk, sizeof(chunk), timeout);
    if (n == 0) {
      if (buffer_.empty()) return std::nullopt;
      std::string line = std::move(buffer_);
      buffer_.clear();
      return line;
    }
    buffer_.append(reinterpret_cast<const char*>(chunk), n);
  }
}

TcpListener::~TcpListener() { close(); }

TcpListener::TcpListener(TcpListener&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), port_(other.port_) {}

TcpListener& TcpListener::operator=(TcpListener&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
    port_ = other.port_;
  }
  return *this;
}

TcpListener TcpListener::bind(const std::string& host, std::uint16_t port) {
  sockaddr_in addr = resolve(host.empty() ? "0.0.0.0" : host, port);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw NetError(NetErrorCode::Io, "socket: " + errno_text());
  TcpListener listener;
  listener.fd_ = fd;
  set_listener_options(fd);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    if (errno == EADDRINUSE) throw NetError(NetErrorCode::PortInUse, std::to_string(port));
    throw NetError(NetErrorCode::Io, "bind: " + errno_text());
  }
  if (::listen(fd, 64) < 0) throw NetError(NetErrorCode::Io, "listen: " + errno_text());
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  listener.port_ = ntohs(bound.sin_port);
  return listener;
}

std::optional<TcpStream> TcpListener::accept(Millis timeout) {
  if (fd_ < 0) return std::nullopt;
  if (!wait_fd(fd_, POLLIN, timeout)) return std::nullopt;
  sockaddr_in peer{};
  socklen_t len = sizeof(peer);
  int fd = ::accept4(fd_, reinterpret_cast<sockaddr*>(&peer), &len, SOCK_CLOEXEC);
  if (fd < 0) return std::nullopt;
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return TcpStream(fd, address_of(peer));
}

void TcpListener::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpServer::TcpServer(const std::string& host, std::uint16_t port, Handler handler)
    : listener_(TcpListener::bind(host, port)), handler_(std::move(handler)) {
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::accept_loop() {
  while (!stopping_) {
    auto stream = listener_.accept(Millis(50));
    reap(false);
    if (!stream) continue;
    std::lock_guard lk(mu_);
    auto& conn = connections_.emplace_back();
    conn.stream = std::move(*stream);
    Connection* c = &conn;
    conn.thread = std::thread([this, c] {
      try {
        handler_(c->stream, stopping_);
      } catch (const std::exception&) {
        // connection-level failure; drop it
      }
      c->stream.shutdown();
      c->done = true;
    });
  }
}

void TcpServer::reap(bool all) {
  std::list<Connection> finished;
  {
    std::lock_guard lk(mu_);
    for (auto it = connections_.begin(); it != connections_.end();) {
      if (all || it->done) {
        if (all) it->stream.shutdown();
        auto next = std::next(it);
        finished.splice(finished.end(), connections_, it);
        it = next;
      } else {
        ++it;
      }
    }
  }
  for (auto& c : finished) {
    if (c.thread.joinable()) c.thread.join();
  }
}

void TcpServer::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  listener_.close();
  reap(true);
}

}  // namespace cipdev::net
