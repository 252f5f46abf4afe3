// Copyright 2023 Google LLC
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mcr/frame.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <limits>

#include <fmt/format.h>

#include "mcr/error.hpp"

namespace mcr::rail {

Bytes encode_frame(const Frame& f) {
  std::uint64_t body = kFrameHeaderBytes - 4 + f.payload.size();
  if (body > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kInvalidArgument, "frame payload too large");
  }
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(body));
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u64(f.src_process);
  w.u64(f.dst_process);
  w.u64(f.src_task);
  w.u64(f.dst_task);
  w.i64(f.tag);
  w.raw(f.payload);
  return std::move(w).take();
}

Frame decode_frame(ByteSpan wire) {
  ByteReader r(wire);
  std::uint32_t len = r.u32();
  if (len != wire.size() - 4) {
    throw Error(ErrorCode::kFormatError,
                fmt::format("frame_len {} does not match {} trailing bytes", len, wire.size() - 4));
  }
  Frame f;
  std::uint8_t type = r.u8();
  if (type > 2) throw Error(ErrorCode::kFormatError, fmt::format("frame type {}", type));
  f.type = static_cast<FrameType>(type);
  f.src_process = r.u64();
  f.dst_process = r.u64();
  f.src_task = r.u64();
  f.dst_task = r.u64();
  f.tag = r.i64();
  ByteSpan rest = r.raw(r.remaining());
  f.payload.assign(rest.begin(), rest.end());
  return f;
}

namespace {

[[noreturn]] void sys_fail(const char* what) {
  throw Error(ErrorCode::kIoError, fmt::format("{}: {}", what, std::strerror(errno)));
}

void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      sys_fail("send");
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

void read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    ssize_t k = ::recv(fd, p, n, 0);
    if (k == 0) throw Error(ErrorCode::kIoError, "peer closed the connection");
    if (k < 0) {
      if (errno == EINTR) continue;
      sys_fail("recv");
    }
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

}  // namespace

FrameSocket& FrameSocket::operator=(FrameSocket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}

FrameSocket::~FrameSocket() { close(); }

void FrameSocket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

FrameSocket FrameSocket::connect(const std::string& host, int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) sys_fail("socket");
  FrameSocket s(fd);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::kIoError, fmt::format("bad IPv4 address '{}'", host));
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) sys_fail("connect");
  return s;
}

void FrameSocket::send(const Frame& frame) {
  if (fd_ < 0) throw Error(ErrorCode::kIoError, "send on a closed socket");
  Bytes wire = encode_frame(frame);
  write_all(fd_, wire.data(), wire.size());
}

Frame FrameSocket::recv() {
  if (fd_ < 0) throw Error(ErrorCode::kIoError, "recv on a closed socket");
  Bytes wire(4);
  read_all(fd_, wire.data(), 4);
  std::uint32_t len = ByteReader(wire).u32();
  if (len < kFrameHeaderBytes - 4) {
    throw Error(ErrorCode::kFormatError, fmt::format("short frame ({} bytes)", len));
  }
  wire.resize(4 + static_cast<std::size_t>(len));
  read_all(fd_, wire.data() + 4, len);
  return decode_frame(wire);
}

FrameListener::FrameListener() {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) sys_fail("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd_);
    sys_fail("bind");
  }
  if (::listen(fd_, 16) != 0) {
    ::close(fd_);
    sys_fail("listen");
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

FrameListener::~FrameListener() {
  if (fd_ >= 0) ::close(fd_);
}

FrameSocket FrameListener::accept() {
  int fd;
  do {
    fd = ::accept(fd_, nullptr, nullptr);
  } while (fd < 0 && errno == EINTR);
  if (fd < 0) sys_fail("accept");
  return FrameSocket(fd);
}

}  // namespace mcr::rail
