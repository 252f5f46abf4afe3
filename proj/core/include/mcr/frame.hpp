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

#ifndef MCR_FRAME_HPP_
#define MCR_FRAME_HPP_

#include <cstdint>
#include <string>
#include <utility>

#include "mcr/bytes.hpp"

namespace mcr::rail {

enum class FrameType : std::uint8_t { kData = 0, kControl = 1, kHandshake = 2 };

// Rail wire frame, little-endian:
//   [u32 frame_len][u8 type][u64 src_process][u64 dst_process]
//   [u64 src_task][u64 dst_task][i64 tag][payload]
// frame_len counts every byte after itself.
struct Frame {
  FrameType type = FrameType::kData;
  std::uint64_t src_process = 0;
  std::uint64_t dst_process = 0;
  std::uint64_t src_task = 0;
  std::uint64_t dst_task = 0;
  std::int64_t tag = 0;
  Bytes payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

inline constexpr std::size_t kFrameHeaderBytes = 4 + 1 + 5 * 8;

Bytes encode_frame(const Frame& frame);
// Decodes exactly one frame spanning all of `wire`. Throws kFormatError.
Frame decode_frame(ByteSpan wire);

// Blocking stream socket carrying frames (used by the tcp driver test path
// and by tools that talk to a live process).
class FrameSocket {
 public:
  FrameSocket() = default;
  explicit FrameSocket(int fd) : fd_(fd) {}
  FrameSocket(FrameSocket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FrameSocket& operator=(FrameSocket&& o) noexcept;
  ~FrameSocket();

  // Throws kIoError.
  static FrameSocket connect(const std::string& host, int port);

  void send(const Frame& frame);
  // Throws kIoError on EOF or socket failure, kFormatError on a bad frame.
  Frame recv();

  bool valid() const { return fd_ >= 0; }
  void close();

 private:
  int fd_ = -1;
};

class FrameListener {
 public:
  // Binds 127.0.0.1 on an ephemeral port. Throws kIoError.
  FrameListener();
  ~FrameListener();
  FrameListener(const FrameListener&) = delete;
  FrameListener& operator=(const FrameListener&) = delete;

  int port() const { return port_; }
  FrameSocket accept();

 private:
  int fd_ = -1;
  int port_ = 0;
};

}  // namespace mcr::rail

#endif  // MCR_FRAME_HPP_
