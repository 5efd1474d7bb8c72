#pragma once

#include <array>
#include <cerrno>
#include <cstdint>
#include <streambuf>
#include <string>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "drowsy/error.hpp"

namespace drowsy::tools {

// Bidirectional streambuf over a connected socket.
class SocketBuf : public std::streambuf {
public:
  explicit SocketBuf(int fd) : fd_(fd) {
    setg(in_.data(), in_.data(), in_.data());
    setp(out_.data(), out_.data() + out_.size());
  }
  ~SocketBuf() override { sync(); }

protected:
  int_type underflow() override {
    ssize_t n;
    do {
      n = ::recv(fd_, in_.data(), in_.size(), 0);
    } while (n < 0 && errno == EINTR);
    if (n <= 0) return traits_type::eof();
    setg(in_.data(), in_.data(), in_.data() + n);
    return traits_type::to_int_type(in_[0]);
  }

  int_type overflow(int_type ch) override {
    if (flush_out() < 0) return traits_type::eof();
    if (!traits_type::eq_int_type(ch, traits_type::eof())) {
      *pptr() = traits_type::to_char_type(ch);
      pbump(1);
    }
    return traits_type::not_eof(ch);
  }

  int sync() override { return flush_out(); }

private:
  int flush_out() {
    const char* p = pbase();
    while (p < pptr()) {
      const ssize_t n = ::send(fd_, p, static_cast<std::size_t>(pptr() - p), MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return -1;
      p += n;
    }
    setp(out_.data(), out_.data() + out_.size());
    return 0;
  }

  int fd_;
  std::array<char, 4096> in_{};
  std::array<char, 4096> out_{};
};

class FileDescriptor {
public:
  explicit FileDescriptor(int fd = -1) : fd_(fd) {}
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  FileDescriptor(FileDescriptor&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  ~FileDescriptor() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }

private:
  int fd_;
};

/// Listening IPv4 TCP socket on all interfaces.
inline FileDescriptor listen_tcp(std::uint16_t port) {
  FileDescriptor sock(::socket(AF_INET, SOCK_STREAM, 0));
  if (sock.get() < 0) fail(ErrorKind::Stream, "cannot create socket");
  const int yes = 1;
  ::setsockopt(sock.get(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(sock.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0)
    fail(ErrorKind::Stream, "cannot bind port " + std::to_string(port));
  if (::listen(sock.get(), 4) < 0) fail(ErrorKind::Stream, "cannot listen on port " + std::to_string(port));
  return sock;
}

}  // namespace drowsy::tools
