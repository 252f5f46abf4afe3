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

#include "mcr/hash.hpp"

#include <openssl/sha.h>
#include <zlib.h>

#include <algorithm>
#include <limits>

namespace mcr {

std::uint32_t crc32_update(std::uint32_t crc, ByteSpan data) {
  uLong c = crc;
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (!data.empty()) {
    std::size_t n = std::min<std::size_t>(data.size(), std::numeric_limits<uInt>::max());
    c = ::crc32(c, data.data(), static_cast<uInt>(n));
    data = data.subspan(n);
  }
  return static_cast<std::uint32_t>(c);
}

std::uint32_t crc32(ByteSpan data) { return crc32_update(0, data); }

Sha256Digest sha256(ByteSpan data) {
  Sha256Digest out{};
  SHA256(data.data(), data.size(), out.data());
  return out;
}

std::string sha256_hex(ByteSpan data) {
  Sha256Digest d = sha256(data);
  return to_hex(d);
}

std::string sha256_hex(std::string_view text) {
  return sha256_hex(ByteSpan(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace mcr
