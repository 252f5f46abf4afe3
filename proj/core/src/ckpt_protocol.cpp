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

// Collective transparent checkpoint: local counting barrier, token gather at
// rank 0 with a quiescence check, synchronized release, rail close, image
// write, reopen and a KVS fence that agrees on the outcome.

#include <chrono>

#include <fmt/format.h>

#include "mcr/error.hpp"
#include "mcr/runtime.hpp"

namespace mcr {

namespace {

constexpr std::uint8_t kGather = 1;
constexpr std::uint8_t kRelease = 2;

Bytes release_payload(std::uint64_t epoch, bool ok, Ticks release_at) {
  ByteWriter w;
  w.u8(kRelease);
  w.u64(epoch);
  w.u8(ok ? 1 : 0);
  w.i64(release_at);
  return std::move(w).take();
}

std::string status_key(std::uint64_t epoch, int p) { return fmt::format("ckpt.{}.status.{}", epoch, p); }

}  // namespace

void Runtime::log_ckpt(CkptEvent::Kind kind, std::uint64_t epoch, int process, int rank,
                       ckpt::CkptState state) {
  ckpt_events_.push_back(CkptEvent{kind, epoch, process, rank, state, now()});
}

Ticks Runtime::verdict_bound() const {
  signal::ControlMessage probe;
  probe.kind = signal::ControlKind::kBarrierToken;
  probe.payload = release_payload(0, true, 0);
  auto bytes = static_cast<std::uint64_t>(signal::encode_control(probe).size());
  Ticks hop = 0;
  for (const auto& r : rails_) hop = std::max(hop, hop_cost(r, bytes));
  return static_cast<Ticks>(n_processes()) * hop;
}

ckpt::ProcessImage Runtime::build_image(int p, std::uint64_t epoch) {
  ckpt::ProcessImage img;
  img.epoch = epoch;
  img.process = p;
  img.virtual_time = now();
  for (int r = p * tasks_per_process(); r < (p + 1) * tasks_per_process(); ++r) {
    auto it = rank_ctx_.find(r);
    if (it == rank_ctx_.end()) continue;
    TaskContext& ctx = *it->second;
    ckpt::TaskImage t;
    t.rank = r;
    t.kind = ctx.kind();
    t.lane = ctx.lane();
    if (ctx.save_) t.blob = ctx.save_();
    img.tasks.push_back(std::move(t));
  }
  rail::RailSet& rs = rails(p);
  for (const auto& spec : rails_) {
    if (!spec.checkpointable) continue;
    ckpt::RailSection sec;
    sec.rail = spec.name;
    for (const auto& ep : rs.table().all()) {
      if (ep.rail != spec.name || ep.state != rail::EndpointState::kConnected) continue;
      sec.endpoints.push_back(ckpt::EndpointImage{ep.remote, ep.kind, ep.conn_info});
    }
    img.rails.push_back(std::move(sec));
  }
  return img;
}

void Runtime::write_manifest(std::uint64_t epoch) {
  ckpt::Manifest m;
  m.job_id = opts_.job_id;
  m.epoch = epoch;
  m.n_processes = n_processes();
  m.tasks_per_process = tasks_per_process();
  m.config_sha256 = config_hash();
  m.virtual_ticks = now();
  m.wall_unix_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  m.dynamic_routes = counters_.route_census;
  for (int p = 0; p < n_processes(); ++p) m.images.push_back(ckpt::image_name(p));
  m.extra = manifest_extra_;
  std::string text = ckpt::encode_manifest(m);
  auto path = ckpt::epoch_dir(job_.ckpt_dir, opts_.job_id, epoch) / std::string(ckpt::kManifestName);
  ckpt::write_file_atomic(path, ByteSpan(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  last_manifest_ = path;
  log_ckpt(CkptEvent::Kind::kManifestWrite, epoch, 0, -1, ckpt::CkptState::kCheckpoint);
}

void Runtime::fence_arrive(TaskContext& ctx, Waiter& w) {
  ++fence_.arrived;
  fence_.waiting.emplace_back(&ctx, &w);
  if (fence_.arrived < alive_processes()) return;
  kvs_->fence();
  auto waiting = std::move(fence_.waiting);
  fence_ = Fence{};
  engine_.after(collective_cost(), [this, waiting = std::move(waiting)] {
    // Every rail that had to close is open again: reconnects count afresh.
    counters_.reconnects = 0;
    routes_closed_ = true;
    counters_.route_census = census_acc_;
    census_acc_ = 0;
    for (auto& [c, cw] : waiting) {
      if (!proc(c->process()).dead) complete(*c, *cw);
    }
  });
}

void Runtime::on_barrier_token(int at, const signal::ControlMessage& msg) {
  ByteReader r(msg.payload);
  std::uint8_t phase = r.u8();
  if (phase == kGather) {
    auto n = static_cast<std::size_t>(r.u32());
    std::vector<std::uint64_t> sent(n), recv(n);
    for (auto& v : sent) v = r.u64();
    for (auto& v : recv) v = r.u64();
    coord_.tokens[msg.origin] = {std::move(sent), std::move(recv)};
    if (static_cast<int>(coord_.tokens.size()) < alive_processes()) return;
    // Quiescence: everything p sent to q was matched by a receive on q.
    bool ok = true;
    for (const auto& [p, pc] : coord_.tokens) {
      for (const auto& [q, qc] : coord_.tokens) {
        if (pc.first[static_cast<std::size_t>(q)] != qc.second[static_cast<std::size_t>(p)]) ok = false;
      }
    }
    coord_.tokens.clear();
    std::uint64_t epoch = epoch_ + 1;
    Ticks release_at = now() + verdict_bound();
    for (int q = 0; q < n_processes(); ++q) {
      if (proc(q).dead) continue;
      signal::ControlMessage v;
      v.kind = signal::ControlKind::kBarrierToken;
      v.origin = at;
      v.target = q;
      v.ttl = static_cast<std::uint32_t>(n_processes());
      v.payload = release_payload(epoch, ok, release_at);
      route_control(at, std::move(v));
    }
    return;
  }
  if (phase != kRelease) throw Error(ErrorCode::kFormatError, fmt::format("barrier phase {}", phase));
  CkptLocal& L = proc(at).ckpt;
  L.epoch = r.u64();
  L.verdict_ok = r.u8() != 0;
  L.release_at = r.i64();
  engine_.at(std::max(now(), L.release_at), [this, at] {
    if (proc(at).dead) return;
    CkptLocal& L2 = proc(at).ckpt;
    if (L2.master_wait == nullptr) return;
    Waiter* w = std::exchange(L2.master_wait, nullptr);
    complete(*L2.master, *w);
  });
}

sched::Co<ckpt::CkptState> Runtime::checkpoint_collective(TaskContext& ctx) {
  using ckpt::CkptState;
  if (!ctx.is_app()) {
    throw Error(ErrorCode::kInvalidArgument, "helper tasks do not take part in checkpoints");
  }
  const int p = ctx.process();
  if (!opts_.checkpointing_enabled) {
    log_ckpt(CkptEvent::Kind::kReturn, epoch_, p, ctx.rank(), CkptState::kIgnore);
    co_return CkptState::kIgnore;
  }
  ckpt_entries_.push_back(now());
  CkptLocal& L = proc(p).ckpt;
  ++L.arrived;
  // First level: counting barrier among the process's tasks; the last one
  // to arrive becomes the master.
  if (L.arrived < tasks_per_process()) {
    Waiter w;
    L.waiting.emplace_back(&ctx, &w);
    co_await wait(ctx, w);
    co_return proc(p).ckpt.result;
  }
  L.arrived = 0;
  L.master = &ctx;
  Waiter verdict;
  L.master_wait = &verdict;

  // Second level: gather counters at rank 0, which releases every master at
  // the same virtual instant.
  {
    Proc& P = proc(p);
    ByteWriter w;
    w.u8(kGather);
    w.u32(static_cast<std::uint32_t>(n_processes()));
    for (auto v : P.sent_to) w.u64(v);
    for (auto v : P.recv_from) w.u64(v);
    signal::ControlMessage tok;
    tok.kind = signal::ControlKind::kBarrierToken;
    tok.origin = p;
    tok.target = 0;
    tok.ttl = static_cast<std::uint32_t>(n_processes());
    tok.payload = std::move(w).take();
    route_control(p, std::move(tok));
  }
  co_await wait(ctx, verdict);

  const std::uint64_t epoch = proc(p).ckpt.epoch;
  CkptState result = CkptState::kError;
  if (proc(p).ckpt.verdict_ok) {
    bool local_ok = true;
    rail::RailSet& rs = rails(p);
    const std::string gen = fmt::format("ckpt{}", epoch);
    // Census of routes that only on-demand connection can bring back.
    for (const auto& ep : rs.table().all()) {
      if (ep.remote <= p || ep.state != rail::EndpointState::kConnected) continue;
      const config::RailSpec& spec = rs.spec(ep.rail);
      if (spec.checkpointable || ep.kind == rail::RouteKind::kStatic) continue;
      ++census_acc_;
    }
    std::vector<const config::RailSpec*> closed;
    for (const auto& spec : rails_) {
      if (spec.checkpointable) continue;
      try {
        rs.close(spec.name);
        closed.push_back(&spec);
      } catch (const Error&) {
        local_ok = false;
      }
    }
    if (local_ok) {
      Bytes image = ckpt::encode_image(build_image(p, epoch));
      co_await ctx.io(job_.cost.local_write_per_byte * static_cast<Ticks>(image.size()));
      try {
        ckpt::write_file_atomic(
            ckpt::epoch_dir(job_.ckpt_dir, opts_.job_id, epoch) / ckpt::image_name(p), image);
        log_ckpt(CkptEvent::Kind::kImageWrite, epoch, p, ctx.rank(), CkptState::kCheckpoint);
      } catch (const Error&) {
        local_ok = false;
      }
    }
    // Fresh rails; topology edges are re-wired through the KVS, the rest lazily.
    for (const auto* spec : closed) {
      rs.reopen(spec->name);
      if (spec->topology != config::Topology::kNone) bootstrap_put(p, *spec, gen);
    }
    kvs_->put(status_key(epoch, p), local_ok ? "ok" : "error");
    Waiter fenced;
    fence_arrive(ctx, fenced);
    co_await wait(ctx, fenced);
    for (const auto* spec : closed) {
      if (spec->topology != config::Topology::kNone) bootstrap_link(p, *spec, gen);
    }
    bool all_ok = true;
    for (int q = 0; q < n_processes(); ++q) {
      if (proc(q).dead) continue;
      if (kvs_->get(status_key(epoch, q)) != "ok") all_ok = false;
    }
    result = all_ok ? CkptState::kCheckpoint : CkptState::kError;
    if (p == 0) {
      auto dir = ckpt::epoch_dir(job_.ckpt_dir, opts_.job_id, epoch);
      if (all_ok) {
        epoch_ = epoch;
        ++counters_.checkpoints;
        write_manifest(epoch);
        ckpt::apply_retention(job_.ckpt_dir, opts_.job_id, 2);
      } else {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
      }
    }
  }
  if (p == 0) {
    CkptSpan span;
    span.epoch = epoch;
    span.first_entry = *std::min_element(ckpt_entries_.begin(), ckpt_entries_.end());
    span.last_entry = *std::max_element(ckpt_entries_.begin(), ckpt_entries_.end());
    span.release = now();
    span.state = result;
    ckpt_spans_.push_back(span);
    ckpt_entries_.clear();
  }
  CkptLocal& L2 = proc(p).ckpt;
  L2.result = result;
  L2.master = nullptr;
  auto waiting = std::move(L2.waiting);
  L2.waiting.clear();
  for (auto& [c, w] : waiting) {
    log_ckpt(CkptEvent::Kind::kReturn, epoch, p, c->rank(), result);
    complete(*c, *w);
  }
  log_ckpt(CkptEvent::Kind::kReturn, epoch, p, ctx.rank(), result);
  co_return result;
}

std::unique_ptr<Runtime> Runtime::restore(const std::filesystem::path& manifest_path,
                                          config::NetConfig net, config::JobSpec job,
                                          RuntimeOptions opts) {
  ckpt::Manifest m = ckpt::read_manifest(manifest_path);
  if (m.n_processes != job.n_processes) {
    throw Error(ErrorCode::kConfigMismatch,
                fmt::format("checkpoint has {} processes, job asks for {}", m.n_processes,
                            job.n_processes));
  }
  if (m.tasks_per_process != job.tasks_per_process) {
    throw Error(ErrorCode::kConfigMismatch,
                fmt::format("checkpoint has {} tasks per process, job asks for {}",
                            m.tasks_per_process, job.tasks_per_process));
  }
  if (m.config_sha256 != config::config_hash(net, job)) {
    throw Error(ErrorCode::kConfigMismatch, "configuration hash differs from the checkpoint");
  }
  std::vector<ckpt::ProcessImage> images;
  auto dir = manifest_path.parent_path();
  for (std::size_t i = 0; i < m.images.size(); ++i) {
    ckpt::ProcessImage img = ckpt::read_image(dir / m.images[i]);
    if (img.process != static_cast<int>(i) || img.epoch != m.epoch) {
      throw Error(ErrorCode::kFormatError,
                  fmt::format("{} holds process {} epoch {}", m.images[i], img.process, img.epoch));
    }
    images.push_back(std::move(img));
  }
  opts.job_id = m.job_id;
  return std::unique_ptr<Runtime>(
      new Runtime(std::move(net), std::move(job), std::move(opts), &images, &m));
}

}  // namespace mcr
