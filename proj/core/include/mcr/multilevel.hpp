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

#ifndef MCR_MULTILEVEL_HPP_
#define MCR_MULTILEVEL_HPP_

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "mcr/bytes.hpp"
#include "mcr/runtime.hpp"
#include "mcr/sched.hpp"

namespace mcr::ml {

// ---------------------------------------------------------------------------
// GF(2^8) over x^8 + x^4 + x^3 + x^2 + 1 (0x11D).
namespace gf {

inline constexpr unsigned kPolynomial = 0x11D;

std::uint8_t mul(std::uint8_t a, std::uint8_t b);
// Throws kDomainError for 0.
std::uint8_t inv(std::uint8_t a);
std::uint8_t div(std::uint8_t a, std::uint8_t b);
inline std::uint8_t add(std::uint8_t a, std::uint8_t b) { return a ^ b; }
// dst[i] ^= c * src[i]
void mul_add(std::uint8_t c, ByteSpan src, std::uint8_t* dst);

}  // namespace gf

// ---------------------------------------------------------------------------
// Reed-Solomon over a Cauchy matrix: parity row j, data column i holds
// 1 / (x_i + y_j) with x_i = i and y_j = k + j.

struct GroupConfig {
  int k = 4;
  int m = 2;
  int partner_offset = 1;

  // Throws kConfigError.
  void validate() const;
};

std::uint8_t cauchy_coefficient(int data_index, int parity_index, int k);

// Throws kDomainError on bad (k, m) or unequal lengths.
std::vector<Bytes> rs_encode(const std::vector<Bytes>& data, int m);

struct Shard {
  int index = 0;  // 0..k-1 data, k..k+m-1 parity
  Bytes data;
};

// Any k distinct shards give back the k data shards. Throws
// kInsufficientShards, kDomainError.
std::vector<Bytes> rs_decode(const std::vector<Shard>& shards, int k, int m);

// Shard as stored, with its integrity header.
struct EncodedShard {
  int group = 0;
  int index = 0;
  std::uint32_t epoch = 0;
  std::uint64_t orig_len = 0;
  std::uint32_t crc = 0;
  Bytes payload;
};

// Verifies every crc (kCrcMismatch) before decoding.
std::vector<Bytes> rs_decode(const std::vector<EncodedShard>& shards, const GroupConfig& cfg);

// ---------------------------------------------------------------------------
// Storage

enum class Level { kL1 = 1, kL2 = 2, kL3 = 3, kL4 = 4 };

// 24-byte little-endian header in front of every stored blob or shard:
//   [u32 magic][u8 level][u8 shard_idx][u16 group][u32 epoch][u64 orig_len][u32 crc]
struct ShardHeader {
  static constexpr std::uint32_t kMagic = 0x4D43534B;
  static constexpr std::uint8_t kBlob = 255;
  static constexpr std::size_t kSize = 24;

  std::uint8_t level = 1;
  std::uint8_t shard_idx = kBlob;
  std::uint16_t group = 0;
  std::uint32_t epoch = 0;
  std::uint64_t orig_len = 0;
  std::uint32_t crc = 0;  // over the payload
};

Bytes encode_stored(ShardHeader header, ByteSpan payload);
// Throws kFormatError or kCrcMismatch.
std::pair<ShardHeader, Bytes> decode_stored(ByteSpan bytes);

// <root>/l<level>/epoch-<n>/rank-<holder>.{blob|shard<i>}
class Storage {
 public:
  // quota_bytes = 0 means unlimited.
  explicit Storage(std::filesystem::path root, std::uint64_t quota_bytes = 0);

  std::filesystem::path path(Level level, std::uint64_t epoch, int holder,
                             std::uint8_t shard_idx = ShardHeader::kBlob) const;
  // Throws kStorageFull, kIoError.
  void write(Level level, std::uint64_t epoch, int holder, ShardHeader header, ByteSpan payload);
  // nullopt when the file is missing or fails its checksum.
  std::optional<std::pair<ShardHeader, Bytes>> read(Level level, std::uint64_t epoch, int holder,
                                                    std::uint8_t shard_idx = ShardHeader::kBlob) const;
  bool exists(Level level, std::uint64_t epoch, int holder,
              std::uint8_t shard_idx = ShardHeader::kBlob) const;
  // Node-local levels (1-3) of `rank` are gone; the shared store survives.
  void lose_rank(int rank);
  std::set<std::uint64_t> epochs() const;
  std::uint64_t used_bytes() const { return used_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::uint64_t quota_;
  std::uint64_t used_ = 0;
};

// ---------------------------------------------------------------------------
// Protected regions

struct ProtectedRegion {
  int id = 0;
  void* data = nullptr;
  std::uint32_t elem_size = 1;
  std::uint64_t count = 0;

  std::uint64_t length() const { return elem_size * count; }
};

// [u32 n][ {u32 id, u32 elem_size, u64 count, bytes} ... ] in ascending id.
Bytes serialize_regions(const std::map<int, ProtectedRegion>& regions);
// Overwrites the registered regions. Throws kFormatError on a shape mismatch.
void load_regions(ByteSpan blob, const std::map<int, ProtectedRegion>& regions);
// Length of the serialized blob at the front of a (possibly zero-padded)
// buffer. Throws kFormatError.
std::uint64_t blob_length(ByteSpan padded);

// ---------------------------------------------------------------------------
// Group layout: a logical process is a node. Groups gather k consecutive
// processes (same task slot); parity of a block lives on the next block.

class Layout {
 public:
  Layout(int n_processes, int tasks_per_process, GroupConfig cfg);

  int n_groups() const;
  int group_of(int rank) const;
  int member_index(int rank) const;
  int rank_of(int group, int member) const;
  std::vector<int> members(int group) const;
  // Holder of rank's partner copy, and the inverse.
  int partner_of(int rank) const;
  int partner_source(int holder) const;
  int parity_holder(int group, int parity_index) const;
  const GroupConfig& config() const { return cfg_; }

 private:
  int n_processes_;
  int tpp_;
  GroupConfig cfg_;
};

// ---------------------------------------------------------------------------
// Service

enum class HelperMode { kInline, kHelperTask };

struct Options {
  GroupConfig group;
  HelperMode mode = HelperMode::kHelperTask;
  std::size_t queue_bound = 4;  // pending epochs per helper
  std::uint64_t quota_bytes = 0;
};

struct AppWorld {
  std::vector<int> app_ranks;
  // (process, local task id) of each helper.
  std::vector<std::pair<int, sched::TaskId>> helpers;

  bool contains(int rank) const;
};

struct PostEvent {
  int rank = 0;
  Level level = Level::kL1;
  std::uint64_t epoch = 0;
  Ticks start = 0;
  Ticks end = 0;
};

// Application-level multilevel checkpointing. Construct after the app tasks
// are spawned so that helpers queue behind them on lane 0.
class Service {
 public:
  // Throws kConfigError.
  Service(Runtime& rt, Options opts);
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const AppWorld& world() const { return world_; }
  const Layout& layout() const { return layout_; }
  Storage& storage() { return storage_; }

  // Throws kDuplicateId.
  void protect(TaskContext& ctx, int id, ProtectedRegion region);
  // L1 on the calling task; higher levels go to the helper (or run inline).
  // Throws kStorageFull, kHelperBacklog.
  sched::Co<> checkpoint(TaskContext& ctx, std::uint64_t ckpt_id, Level level);
  // Restores the latest checkpoint every rank can rebuild from sources up to
  // `level`. Returns its id. Throws kUnrecoverable.
  sched::Co<std::uint64_t> recover(TaskContext& ctx, Level level);
  // Highest-level source used for `rank` by the last recovery.
  std::optional<Level> recovered_from(int rank) const;
  // Lets the process's helper exit once its queue drains.
  void finalize(TaskContext& ctx);

  const std::vector<PostEvent>& post_events() const { return post_events_; }

 private:
  struct Job {
    int rank;
    Level level;
    std::uint64_t epoch;
    Bytes blob;
  };
  struct Helper {
    TaskContext* ctx = nullptr;
    std::deque<Job> queue;
    bool idle_blocked = false;
    int finalized = 0;
  };
  struct Plan {
    std::uint64_t epoch = 0;
    std::map<int, Bytes> blobs;
    std::map<int, Level> source;
  };

  sched::Co<> helper_loop(TaskContext& ctx);
  sched::Co<> post_process(TaskContext& worker, Job job);
  void contribute_parity(const Job& job);
  std::optional<Plan> plan_epoch(std::uint64_t epoch, Level max_level) const;
  std::optional<Bytes> rebuild(int rank, std::uint64_t epoch, Level max_level, Level* used) const;

  Runtime& rt_;
  Options opts_;
  Layout layout_;
  Storage storage_;
  AppWorld world_;
  std::map<int, std::map<int, ProtectedRegion>> regions_;
  std::map<int, Helper> helpers_;  // by process
  std::map<std::pair<int, std::uint64_t>, std::map<int, Bytes>> parity_inputs_;
  std::optional<Plan> plan_;
  std::vector<PostEvent> post_events_;
};

}  // namespace mcr::ml

#endif  // MCR_MULTILEVEL_HPP_
