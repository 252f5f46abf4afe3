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

// Stored-blob format, the level directories, protected-region blobs and the
// group layout.

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "mcr/error.hpp"
#include "mcr/hash.hpp"
#include "mcr/multilevel.hpp"

namespace mcr::ml {

namespace fs = std::filesystem;

Bytes encode_stored(ShardHeader header, ByteSpan payload) {
  header.crc = crc32(payload);
  ByteWriter w;
  w.u32(ShardHeader::kMagic);
  w.u8(header.level);
  w.u8(header.shard_idx);
  w.u16(header.group);
  w.u32(header.epoch);
  w.u64(header.orig_len);
  w.u32(header.crc);
  w.raw(payload);
  return std::move(w).take();
}

std::pair<ShardHeader, Bytes> decode_stored(ByteSpan bytes) {
  if (bytes.size() < ShardHeader::kSize) {
    throw Error(ErrorCode::kFormatError, fmt::format("stored blob of {} bytes has no header", bytes.size()));
  }
  ByteReader r(bytes);
  if (r.u32() != ShardHeader::kMagic) throw Error(ErrorCode::kFormatError, "bad stored-blob magic");
  ShardHeader h;
  h.level = r.u8();
  h.shard_idx = r.u8();
  h.group = r.u16();
  h.epoch = r.u32();
  h.orig_len = r.u64();
  h.crc = r.u32();
  ByteSpan body = r.raw(r.remaining());
  if (crc32(body) != h.crc) {
    throw Error(ErrorCode::kCrcMismatch,
                fmt::format("stored blob (level {}, shard {}, epoch {}) fails its checksum", h.level,
                            h.shard_idx, h.epoch));
  }
  return {h, Bytes(body.begin(), body.end())};
}

// ---------------------------------------------------------------------------

Storage::Storage(fs::path root, std::uint64_t quota_bytes) : root_(std::move(root)), quota_(quota_bytes) {}

fs::path Storage::path(Level level, std::uint64_t epoch, int holder, std::uint8_t shard_idx) const {
  std::string name = shard_idx == ShardHeader::kBlob ? fmt::format("rank-{}.blob", holder)
                                                     : fmt::format("rank-{}.shard{}", holder, shard_idx);
  return root_ / fmt::format("l{}", static_cast<int>(level)) / fmt::format("epoch-{}", epoch) / name;
}

void Storage::write(Level level, std::uint64_t epoch, int holder, ShardHeader header, ByteSpan payload) {
  Bytes data = encode_stored(header, payload);
  if (quota_ != 0 && used_ + data.size() > quota_) {
    throw Error(ErrorCode::kStorageFull,
                fmt::format("writing {} bytes would exceed the {}-byte quota ({} used)", data.size(),
                            quota_, used_));
  }
  fs::path p = path(level, epoch, holder, header.shard_idx);
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw Error(ErrorCode::kIoError, fmt::format("cannot create {}: {}", p.parent_path().string(), ec.message()));
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::kIoError, fmt::format("cannot write {}", p.string()));
  used_ += data.size();
}

std::optional<std::pair<ShardHeader, Bytes>> Storage::read(Level level, std::uint64_t epoch, int holder,
                                                           std::uint8_t shard_idx) const {
  fs::path p = path(level, epoch, holder, shard_idx);
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_stored(data);
  } catch (const Error&) {
    return std::nullopt;
  }
}

bool Storage::exists(Level level, std::uint64_t epoch, int holder, std::uint8_t shard_idx) const {
  return fs::exists(path(level, epoch, holder, shard_idx));
}

void Storage::lose_rank(int rank) {
  std::string prefix = fmt::format("rank-{}.", rank);
  for (int l = 1; l <= 3; ++l) {
    fs::path dir = root_ / fmt::format("l{}", l);
    if (!fs::exists(dir)) continue;
    for (const auto& epoch_dir : fs::directory_iterator(dir)) {
      if (!epoch_dir.is_directory()) continue;
      for (const auto& f : fs::directory_iterator(epoch_dir.path())) {
        if (f.path().filename().string().rfind(prefix, 0) == 0) fs::remove(f.path());
      }
    }
  }
}

std::set<std::uint64_t> Storage::epochs() const {
  std::set<std::uint64_t> out;
  for (int l = 1; l <= 4; ++l) {
    fs::path dir = root_ / fmt::format("l{}", l);
    if (!fs::exists(dir)) continue;
    for (const auto& e : fs::directory_iterator(dir)) {
      std::string name = e.path().filename().string();
      if (name.rfind("epoch-", 0) != 0) continue;
      std::uint64_t n = 0;
      auto [ptr, ec] = std::from_chars(name.data() + 6, name.data() + name.size(), n);
      if (ec == std::errc() && ptr == name.data() + name.size()) out.insert(n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Bytes serialize_regions(const std::map<int, ProtectedRegion>& regions) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(regions.size()));
  for (const auto& [id, r] : regions) {
    w.u32(static_cast<std::uint32_t>(id));
    w.u32(r.elem_size);
    w.u64(r.count);
    w.raw(ByteSpan(static_cast<const std::uint8_t*>(r.data), r.length()));
  }
  return std::move(w).take();
}

void load_regions(ByteSpan blob, const std::map<int, ProtectedRegion>& regions) {
  ByteReader r(blob);
  std::uint32_t n = r.u32();
  if (n != regions.size()) {
    throw Error(ErrorCode::kFormatError,
                fmt::format("blob holds {} regions, {} are protected", n, regions.size()));
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    int id = static_cast<int>(r.u32());
    std::uint32_t elem = r.u32();
    std::uint64_t count = r.u64();
    auto it = regions.find(id);
    if (it == regions.end() || it->second.elem_size != elem || it->second.count != count) {
      throw Error(ErrorCode::kFormatError, fmt::format("region {} does not match its registration", id));
    }
    ByteSpan bytes = r.raw(elem * count);
    std::memcpy(it->second.data, bytes.data(), bytes.size());
  }
}

std::uint64_t blob_length(ByteSpan padded) {
  ByteReader r(padded);
  try {
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      r.u32();
      std::uint64_t elem = r.u32();
      std::uint64_t count = r.u64();
      if (count != 0 && elem > r.remaining() / count) throw Error(ErrorCode::kFormatError, "region overruns blob");
      r.raw(elem * count);
    }
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormatError, fmt::format("not a region blob: {}", e.what()));
  }
  return r.offset();
}

// ---------------------------------------------------------------------------

Layout::Layout(int n_processes, int tasks_per_process, GroupConfig cfg)
    : n_processes_(n_processes), tpp_(tasks_per_process), cfg_(cfg) {
  cfg_.validate();
  if (n_processes_ % cfg_.k != 0) {
    throw Error(ErrorCode::kConfigError,
                fmt::format("{} processes do not split into groups of {}", n_processes_, cfg_.k));
  }
  if (cfg_.m > 0 && n_processes_ < cfg_.k + cfg_.m) {
    throw Error(ErrorCode::kConfigError,
                fmt::format("{} processes cannot hold groups of {} plus {} parity holders", n_processes_,
                            cfg_.k, cfg_.m));
  }
}

int Layout::n_groups() const { return n_processes_ / cfg_.k * tpp_; }

int Layout::group_of(int rank) const {
  int p = rank / tpp_;
  return (p / cfg_.k) * tpp_ + rank % tpp_;
}

int Layout::member_index(int rank) const { return (rank / tpp_) % cfg_.k; }

int Layout::rank_of(int group, int member) const {
  int block = group / tpp_;
  int slot = group % tpp_;
  return (block * cfg_.k + member) * tpp_ + slot;
}

std::vector<int> Layout::members(int group) const {
  std::vector<int> out;
  for (int i = 0; i < cfg_.k; ++i) out.push_back(rank_of(group, i));
  return out;
}

int Layout::partner_of(int rank) const {
  int off = ((cfg_.partner_offset % cfg_.k) + cfg_.k) % cfg_.k;
  return rank_of(group_of(rank), (member_index(rank) + off) % cfg_.k);
}

int Layout::partner_source(int holder) const {
  int off = ((cfg_.partner_offset % cfg_.k) + cfg_.k) % cfg_.k;
  return rank_of(group_of(holder), (member_index(holder) - off + cfg_.k) % cfg_.k);
}

int Layout::parity_holder(int group, int parity_index) const {
  int blocks = n_processes_ / cfg_.k;
  int next = ((group / tpp_) + 1) % blocks;
  return rank_of(next * tpp_ + group % tpp_, parity_index % cfg_.k);
}

}  // namespace mcr::ml
