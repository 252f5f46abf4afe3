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

#include <fmt/format.h>

#include "mcr/error.hpp"
#include "mcr/hash.hpp"
#include "mcr/multilevel.hpp"

namespace mcr::ml {

void GroupConfig::validate() const {
  if (k < 1 || m < 0 || k + m > 255) {
    throw Error(ErrorCode::kConfigError, fmt::format("bad group shape k={} m={}", k, m));
  }
  if (k > 1 && partner_offset % k == 0) {
    throw Error(ErrorCode::kConfigError,
                fmt::format("partner offset {} maps ranks onto themselves (k={})", partner_offset, k));
  }
}

std::uint8_t cauchy_coefficient(int data_index, int parity_index, int k) {
  return gf::inv(static_cast<std::uint8_t>(data_index ^ (k + parity_index)));
}

namespace {

void check_shape(int k, int m) {
  if (k < 1 || m < 0 || k + m > 255) {
    throw Error(ErrorCode::kDomainError, fmt::format("bad Reed-Solomon shape k={} m={}", k, m));
  }
}

// Row of the (k+m) x k generator: identity on top, Cauchy rows below.
std::vector<std::uint8_t> generator_row(int index, int k) {
  std::vector<std::uint8_t> row(static_cast<std::size_t>(k), 0);
  if (index < k) {
    row[static_cast<std::size_t>(index)] = 1;
  } else {
    for (int i = 0; i < k; ++i) row[static_cast<std::size_t>(i)] = cauchy_coefficient(i, index - k, k);
  }
  return row;
}

// Gauss-Jordan inverse of a k x k matrix over GF(2^8).
std::vector<std::vector<std::uint8_t>> invert(std::vector<std::vector<std::uint8_t>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<std::uint8_t>> out(n, std::vector<std::uint8_t>(n, 0));
  for (std::size_t i = 0; i < n; ++i) out[i][i] = 1;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    while (pivot < n && a[pivot][col] == 0) ++pivot;
    if (pivot == n) throw Error(ErrorCode::kDomainError, "singular decoding matrix");
    std::swap(a[pivot], a[col]);
    std::swap(out[pivot], out[col]);
    std::uint8_t s = gf::inv(a[col][col]);
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] = gf::mul(a[col][j], s);
      out[col][j] = gf::mul(out[col][j], s);
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || a[r][col] == 0) continue;
      std::uint8_t f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] ^= gf::mul(f, a[col][j]);
        out[r][j] ^= gf::mul(f, out[col][j]);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<Bytes> rs_encode(const std::vector<Bytes>& data, int m) {
  int k = static_cast<int>(data.size());
  check_shape(k, m);
  std::size_t len = data.front().size();
  for (const auto& d : data) {
    if (d.size() != len) throw Error(ErrorCode::kDomainError, "data shards differ in length");
  }
  std::vector<Bytes> parity(static_cast<std::size_t>(m), Bytes(len, 0));
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < k; ++i) {
      gf::mul_add(cauchy_coefficient(i, j, k), data[static_cast<std::size_t>(i)],
                  parity[static_cast<std::size_t>(j)].data());
    }
  }
  return parity;
}

std::vector<Bytes> rs_decode(const std::vector<Shard>& shards, int k, int m) {
  check_shape(k, m);
  std::vector<const Shard*> use;
  std::vector<bool> seen(static_cast<std::size_t>(k + m), false);
  for (const auto& s : shards) {
    if (s.index < 0 || s.index >= k + m) {
      throw Error(ErrorCode::kDomainError, fmt::format("shard index {} outside 0..{}", s.index, k + m - 1));
    }
    if (seen[static_cast<std::size_t>(s.index)]) continue;
    seen[static_cast<std::size_t>(s.index)] = true;
    use.push_back(&s);
  }
  if (static_cast<int>(use.size()) < k) {
    throw Error(ErrorCode::kInsufficientShards,
                fmt::format("{} distinct shards, {} needed", use.size(), k));
  }
  // Prefer data shards: fewer parity rows means less work.
  std::stable_sort(use.begin(), use.end(), [](const Shard* a, const Shard* b) { return a->index < b->index; });
  use.resize(static_cast<std::size_t>(k));
  std::size_t len = use.front()->data.size();
  for (const auto* s : use) {
    if (s->data.size() != len) throw Error(ErrorCode::kDomainError, "shards differ in length");
  }
  std::vector<Bytes> out(static_cast<std::size_t>(k));
  bool identity = true;
  for (int i = 0; i < k; ++i) identity = identity && use[static_cast<std::size_t>(i)]->index == i;
  if (identity) {
    for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = use[static_cast<std::size_t>(i)]->data;
    return out;
  }
  std::vector<std::vector<std::uint8_t>> a;
  for (const auto* s : use) a.push_back(generator_row(s->index, k));
  auto dec = invert(std::move(a));
  for (int i = 0; i < k; ++i) {
    Bytes row(len, 0);
    for (int j = 0; j < k; ++j) {
      gf::mul_add(dec[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                  use[static_cast<std::size_t>(j)]->data, row.data());
    }
    out[static_cast<std::size_t>(i)] = std::move(row);
  }
  return out;
}

std::vector<Bytes> rs_decode(const std::vector<EncodedShard>& shards, const GroupConfig& cfg) {
  std::vector<Shard> plain;
  for (const auto& s : shards) {
    if (crc32(s.payload) != s.crc) {
      throw Error(ErrorCode::kCrcMismatch,
                  fmt::format("shard {} of group {} epoch {} is corrupted", s.index, s.group, s.epoch));
    }
    plain.push_back(Shard{s.index, s.payload});
  }
  return rs_decode(plain, cfg.k, cfg.m);
}

}  // namespace mcr::ml
