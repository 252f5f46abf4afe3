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

#include <array>

#include "mcr/error.hpp"
#include "mcr/multilevel.hpp"

namespace mcr::ml::gf {

namespace {

struct Tables {
  std::array<std::uint8_t, 512> exp{};
  std::array<int, 256> log{};

  Tables() {
    unsigned x = 1;
    for (int i = 0; i < 255; ++i) {
      exp[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(x);
      log[x] = i;
      x <<= 1;
      if (x & 0x100) x ^= kPolynomial;
    }
    for (int i = 255; i < 512; ++i) exp[static_cast<std::size_t>(i)] = exp[static_cast<std::size_t>(i - 255)];
    log[0] = -1;
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

std::uint8_t mul(std::uint8_t a, std::uint8_t b) {
  if (a == 0 || b == 0) return 0;
  const Tables& t = tables();
  return t.exp[static_cast<std::size_t>(t.log[a] + t.log[b])];
}

std::uint8_t inv(std::uint8_t a) {
  if (a == 0) throw Error(ErrorCode::kDomainError, "zero has no inverse in GF(2^8)");
  const Tables& t = tables();
  return t.exp[static_cast<std::size_t>(255 - t.log[a])];
}

std::uint8_t div(std::uint8_t a, std::uint8_t b) { return mul(a, inv(b)); }

void mul_add(std::uint8_t c, ByteSpan src, std::uint8_t* dst) {
  if (c == 0) return;
  const Tables& t = tables();
  int lc = t.log[c];
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::uint8_t s = src[i];
    if (s != 0) dst[i] ^= t.exp[static_cast<std::size_t>(lc + t.log[s])];
  }
}

}  // namespace mcr::ml::gf
