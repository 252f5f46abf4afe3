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

#include "mcr/multilevel.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mcr/error.hpp"
#include "mcr/hash.hpp"

namespace mcr::ml {

bool AppWorld::contains(int rank) const {
  return std::binary_search(app_ranks.begin(), app_ranks.end(), rank);
}

Service::Service(Runtime& rt, Options opts)
    : rt_(rt),
      opts_(opts),
      layout_(rt.n_processes(), rt.tasks_per_process(), opts.group),
      storage_(rt.job().ckpt_dir / rt.options().job_id / "ml", opts.quota_bytes) {
  if (opts_.queue_bound == 0) throw Error(ErrorCode::kConfigError, "helper queue bound must be positive");
  for (int r = 0; r < rt_.n_ranks(); ++r) world_.app_ranks.push_back(r);
  if (opts_.mode == HelperMode::kHelperTask) {
    for (int p = 0; p < rt_.n_processes(); ++p) {
      if (rt_.is_dead(p)) continue;
      helpers_[p];
      TaskContext& h = rt_.spawn_helper(p, [this](TaskContext& ctx) { return helper_loop(ctx); });
      helpers_[p].ctx = &h;
      world_.helpers.emplace_back(p, h.local_id());
    }
  }
  rt_.add_kill_hook([this](int p) {
    int tpp = rt_.tasks_per_process();
    for (int r = p * tpp; r < (p + 1) * tpp; ++r) storage_.lose_rank(r);
    if (auto it = helpers_.find(p); it != helpers_.end()) it->second.queue.clear();
  });
}

void Service::protect(TaskContext& ctx, int id, ProtectedRegion region) {
  auto& regs = regions_[ctx.rank()];
  if (regs.count(id) != 0) {
    throw Error(ErrorCode::kDuplicateId, fmt::format("rank {} already protects region {}", ctx.rank(), id));
  }
  region.id = id;
  regs[id] = region;
}

sched::Co<> Service::checkpoint(TaskContext& ctx, std::uint64_t ckpt_id, Level level) {
  if (!ctx.is_app()) throw Error(ErrorCode::kInvalidArgument, "helpers do not checkpoint");
  const int rank = ctx.rank();
  Bytes blob = serialize_regions(regions_[rank]);
  const auto n = static_cast<Ticks>(blob.size());

  co_await ctx.io(ctx.cost().local_write_per_byte * n);
  ShardHeader h;
  h.level = 1;
  h.group = static_cast<std::uint16_t>(layout_.group_of(rank));
  h.epoch = static_cast<std::uint32_t>(ckpt_id);
  h.orig_len = blob.size();
  storage_.write(Level::kL1, ckpt_id, rank, h, blob);
  post_events_.push_back(PostEvent{rank, Level::kL1, ckpt_id, ctx.now() - ctx.cost().local_write_per_byte * n,
                                   ctx.now()});
  if (level == Level::kL1) co_return;

  Job job{rank, level, ckpt_id, std::move(blob)};
  if (opts_.mode == HelperMode::kInline) {
    co_await post_process(ctx, std::move(job));
    co_return;
  }
  Helper& hp = helpers_.at(ctx.process());
  std::set<std::uint64_t> pending;
  for (const auto& j : hp.queue) pending.insert(j.epoch);
  if (pending.count(ckpt_id) == 0 && pending.size() >= opts_.queue_bound) {
    throw Error(ErrorCode::kHelperBacklog,
                fmt::format("helper of process {} already holds {} pending epochs", ctx.process(),
                            pending.size()));
  }
  hp.queue.push_back(std::move(job));
  if (hp.idle_blocked) rt_.scheduler(ctx.process()).wake(hp.ctx->local_id());
}

void Service::finalize(TaskContext& ctx) {
  auto it = helpers_.find(ctx.process());
  if (it == helpers_.end()) return;
  ++it->second.finalized;
  if (it->second.idle_blocked) rt_.scheduler(ctx.process()).wake(it->second.ctx->local_id());
}

sched::Co<> Service::helper_loop(TaskContext& ctx) {
  Helper& h = helpers_.at(ctx.process());
  sched::Scheduler& s = rt_.scheduler(ctx.process());
  for (;;) {
    while (h.queue.empty()) {
      if (h.finalized >= rt_.tasks_per_process()) co_return;
      h.idle_blocked = true;
      co_await s.block(ctx.local_id(), sched::TaskState::kBlockedRecv);
      h.idle_blocked = false;
    }
    Job job = std::move(h.queue.front());
    h.queue.pop_front();
    co_await post_process(ctx, std::move(job));
  }
}

sched::Co<> Service::post_process(TaskContext& worker, Job job) {
  const CostModel& c = worker.cost();
  const auto n = static_cast<Ticks>(job.blob.size());
  const Ticks start = worker.now();
  ShardHeader h;
  h.level = static_cast<std::uint8_t>(job.level);
  h.group = static_cast<std::uint16_t>(layout_.group_of(job.rank));
  h.epoch = static_cast<std::uint32_t>(job.epoch);
  h.orig_len = job.blob.size();
  switch (job.level) {
    case Level::kL1:
      break;
    case Level::kL2: {
      co_await worker.io((c.net_per_byte + c.local_write_per_byte) * n);
      int holder = layout_.partner_of(job.rank);
      if (!rt_.is_dead(rt_.process_of(holder))) storage_.write(Level::kL2, job.epoch, holder, h, job.blob);
      break;
    }
    case Level::kL3: {
      const Ticks m = layout_.config().m;
      co_await worker.hold(c.encode_per_byte * n * m);
      co_await worker.io(c.net_per_byte * n * m);
      contribute_parity(job);
      break;
    }
    case Level::kL4:
      co_await worker.io(c.pfs_per_byte * n);
      storage_.write(Level::kL4, job.epoch, job.rank, h, job.blob);
      break;
  }
  post_events_.push_back(PostEvent{job.rank, job.level, job.epoch, start, worker.now()});
}

void Service::contribute_parity(const Job& job) {
  const GroupConfig& cfg = layout_.config();
  int g = layout_.group_of(job.rank);
  auto& inputs = parity_inputs_[{g, job.epoch}];
  inputs[layout_.member_index(job.rank)] = job.blob;
  if (static_cast<int>(inputs.size()) < cfg.k) return;
  std::size_t len = 0;
  for (const auto& [i, b] : inputs) len = std::max(len, b.size());
  std::vector<Bytes> data;
  for (auto& [i, b] : inputs) {
    Bytes padded = b;
    padded.resize(len, 0);
    data.push_back(std::move(padded));
  }
  parity_inputs_.erase({g, job.epoch});
  if (cfg.m == 0) return;
  std::vector<Bytes> parity = rs_encode(data, cfg.m);
  for (int j = 0; j < cfg.m; ++j) {
    int holder = layout_.parity_holder(g, j);
    if (rt_.is_dead(rt_.process_of(holder))) continue;
    ShardHeader h;
    h.level = 3;
    h.shard_idx = static_cast<std::uint8_t>(cfg.k + j);
    h.group = static_cast<std::uint16_t>(g);
    h.epoch = static_cast<std::uint32_t>(job.epoch);
    h.orig_len = len;  // padded length; members trim via the region layout
    storage_.write(Level::kL3, job.epoch, holder, h, parity[static_cast<std::size_t>(j)]);
  }
}

std::optional<Bytes> Service::rebuild(int rank, std::uint64_t epoch, Level max_level, Level* used) const {
  auto trimmed = [](std::pair<ShardHeader, Bytes> s) {
    s.second.resize(std::min<std::size_t>(s.second.size(), s.first.orig_len));
    return std::move(s.second);
  };
  if (auto s = storage_.read(Level::kL1, epoch, rank)) {
    *used = Level::kL1;
    return trimmed(std::move(*s));
  }
  if (max_level >= Level::kL2) {
    if (auto s = storage_.read(Level::kL2, epoch, layout_.partner_of(rank))) {
      *used = Level::kL2;
      return trimmed(std::move(*s));
    }
  }
  if (max_level >= Level::kL3 && layout_.config().m > 0) {
    const GroupConfig& cfg = layout_.config();
    int g = layout_.group_of(rank);
    std::vector<EncodedShard> parity;
    for (int j = 0; j < cfg.m; ++j) {
      auto s = storage_.read(Level::kL3, epoch, layout_.parity_holder(g, j),
                             static_cast<std::uint8_t>(cfg.k + j));
      if (!s) continue;
      parity.push_back(EncodedShard{g, cfg.k + j, s->first.epoch, s->first.orig_len, s->first.crc,
                                    std::move(s->second)});
    }
    if (!parity.empty()) {
      std::size_t len = parity.front().orig_len;
      std::vector<EncodedShard> shards;
      for (int i = 0; i < cfg.k; ++i) {
        auto s = storage_.read(Level::kL1, epoch, layout_.rank_of(g, i));
        if (!s || s->second.size() > len) continue;
        Bytes padded = std::move(s->second);
        padded.resize(len, 0);
        EncodedShard e{g, i, static_cast<std::uint32_t>(epoch), len, 0, std::move(padded)};
        e.crc = crc32(e.payload);
        shards.push_back(std::move(e));
      }
      for (auto& p : parity) shards.push_back(std::move(p));
      if (static_cast<int>(shards.size()) >= cfg.k) {
        std::vector<Bytes> data = rs_decode(shards, cfg);
        Bytes b = std::move(data[static_cast<std::size_t>(layout_.member_index(rank))]);
        b.resize(blob_length(b));
        *used = Level::kL3;
        return b;
      }
    }
  }
  if (max_level >= Level::kL4) {
    if (auto s = storage_.read(Level::kL4, epoch, rank)) {
      *used = Level::kL4;
      return trimmed(std::move(*s));
    }
  }
  return std::nullopt;
}

std::optional<Service::Plan> Service::plan_epoch(std::uint64_t epoch, Level max_level) const {
  Plan plan;
  plan.epoch = epoch;
  for (int r : world_.app_ranks) {
    Level used = Level::kL1;
    auto b = rebuild(r, epoch, max_level, &used);
    if (!b) return std::nullopt;
    plan.blobs[r] = std::move(*b);
    plan.source[r] = used;
  }
  return plan;
}

sched::Co<std::uint64_t> Service::recover(TaskContext& ctx, Level level) {
  if (!ctx.is_app()) throw Error(ErrorCode::kInvalidArgument, "helpers do not recover");
  if (!plan_) {
    std::set<std::uint64_t> epochs = storage_.epochs();
    for (auto it = epochs.rbegin(); it != epochs.rend() && !plan_; ++it) plan_ = plan_epoch(*it, level);
    if (!plan_) {
      throw Error(ErrorCode::kUnrecoverable,
                  fmt::format("no checkpoint epoch can be rebuilt for every rank from levels up to L{}",
                              static_cast<int>(level)));
    }
  }
  const Bytes& blob = plan_->blobs.at(ctx.rank());
  co_await ctx.io(ctx.cost().local_write_per_byte * static_cast<Ticks>(blob.size()));
  load_regions(blob, regions_[ctx.rank()]);
  co_return plan_->epoch;
}

std::optional<Level> Service::recovered_from(int rank) const {
  if (!plan_) return std::nullopt;
  auto it = plan_->source.find(rank);
  if (it == plan_->source.end()) return std::nullopt;
  return it->second;
}

}  // namespace mcr::ml
