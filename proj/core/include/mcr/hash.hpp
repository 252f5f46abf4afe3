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

#ifndef MCR_HASH_HPP_
#define MCR_HASH_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "mcr/bytes.hpp"

namespace mcr {

// CRC-32, IEEE 802.3 (reflected polynomial 0xEDB88320).
std::uint32_t crc32(ByteSpan data);
std::uint32_t crc32_update(std::uint32_t crc, ByteSpan data);

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(ByteSpan data);
std::string sha256_hex(ByteSpan data);
std::string sha256_hex(std::string_view text);

}  // namespace mcr

#endif  // MCR_HASH_HPP_
