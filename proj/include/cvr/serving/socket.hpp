#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>

#include "cvr/serving/wire.hpp"

namespace cvr {

class SocketError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool open() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  // Wakes any thread blocked in accept/recv on this socket.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline SocketError sys_error(const std::string& what) { return SocketError(what + ": " + std::strerror(errno)); }

inline void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

// Listens on 127.0.0.1 (or any interface); port 0 picks a free port.
inline Socket listen_tcp(std::uint16_t port, bool loopback_only = true) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.open()) throw sys_error("socket");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(loopback_only ? INADDR_LOOPBACK : INADDR_ANY);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) throw sys_error("bind");
  if (::listen(s.fd(), 64) != 0) throw sys_error("listen");
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw sys_error("getsockname");
  return ntohs(addr.sin_port);
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
    throw SocketError("resolve " + host + ": " + ::gai_strerror(rc));
  Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  const int rc = s.open() ? ::connect(s.fd(), res->ai_addr, res->ai_addrlen) : -1;
  ::freeaddrinfo(res);
  if (rc != 0) throw sys_error("connect " + host + ":" + std::to_string(port));
  set_nodelay(s.fd());
  return s;
}

inline void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw sys_error("send");
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// False on clean EOF before the first byte; throws on EOF mid-buffer.
inline bool read_exact(int fd, char* buf, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, buf + got, n - got, 0);
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) throw sys_error("recv");
    if (r == 0) {
      if (got == 0) return false;
      throw SocketError("connection closed mid-frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

// One frame payload, or nullopt on clean EOF.
inline std::optional<std::string> read_frame(int fd) {
  char header[4];
  if (!read_exact(fd, header, 4)) return std::nullopt;
  const auto len = frame_length(std::string_view(header, 4));
  std::string payload(len, '\0');
  if (len > 0 && !read_exact(fd, payload.data(), len)) throw SocketError("connection closed mid-frame");
  return payload;
}

}  // namespace cvr
