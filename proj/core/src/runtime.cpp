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

#include "mcr/runtime.hpp"

#include <algorithm>
#include <bit>

#include <fmt/format.h>

#include "mcr/error.hpp"
#include "mcr/frame.hpp"

namespace mcr {

// ---------------------------------------------------------------------------
// TaskContext

int TaskContext::n_ranks() const { return rt_->n_ranks(); }
const CostModel& TaskContext::cost() const { return rt_->job_.cost; }
Ticks TaskContext::now() const { return rt_->now(); }
sched::Scheduler& TaskContext::sched() const { return rt_->scheduler(process_); }

sched::Scheduler::HoldAwaiter TaskContext::compute(std::uint64_t units) {
  return sched().compute(local_, units);
}
sched::Scheduler::HoldAwaiter TaskContext::hold(Ticks ticks) { return sched().hold(local_, ticks); }
sched::Scheduler::YieldAwaiter TaskContext::yield_now() { return sched().yield_now(local_); }
sched::Scheduler::BlockAwaiter TaskContext::sleep_for(Ticks ticks) {
  return sched().sleep_for(local_, ticks);
}
sched::Scheduler::BlockAwaiter TaskContext::io(Ticks ticks) { return sched().io(local_, ticks); }

const Bytes& TaskContext::restored_blob() const {
  if (!restored_) throw Error(ErrorCode::kInvalidArgument, "task was not restarted");
  return *restored_;
}

ckpt::CkptState TaskContext::restart_state() {
  if (!restored_) throw Error(ErrorCode::kInvalidArgument, "task was not restarted");
  rt_->log_ckpt(CkptEvent::Kind::kReturn, rt_->restored_epoch(), process_, rank_,
                ckpt::CkptState::kRestart);
  return ckpt::CkptState::kRestart;
}

sched::Co<> TaskContext::send(int dst_rank, std::int64_t tag, Bytes payload) {
  Runtime& rt = *rt_;
  if (!is_app()) throw Error(ErrorCode::kInvalidArgument, "helper tasks do not send messages");
  if (dst_rank < 0 || dst_rank >= rt.n_ranks()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("destination rank {}", dst_rank));
  }
  int dp = rt.process_of(dst_rank);
  if (rt.is_dead(dp)) {
    throw Error(ErrorCode::kPeerFailed, fmt::format("process {} is dead", dp));
  }
  rail::Message m{rank_, dst_rank, process_, dp, tag, std::move(payload), {}};
  if (dp == process_) {
    ++rt.proc(process_).sent_to[static_cast<std::size_t>(dp)];
    ++rt.counters_.local_messages;
    rt.deliver(std::move(m));
    co_return;
  }
  for (;;) {
    rail::RailSet& rs = rt.rails(process_);
    rail::Election el = rail::elect_endpoint(
        rs.table(), m, rs.rails(), [&rs](std::string_view r) { return rs.is_open(r); });
    if (el.kind == rail::Election::Kind::kExisting) {
      Ticks cost = rt.hop_cost(rs.spec(el.endpoint->rail), m.size());
      ++rt.proc(process_).sent_to[static_cast<std::size_t>(dp)];
      rt.transmit_data(process_, *el.endpoint, std::move(m));
      // The sender's lane is busy for the whole transfer.
      co_await hold(cost);
      co_return;
    }
    Runtime::Waiter w;
    rt.request_connection(process_, dp, el.rail->name,
                          [&rt, this, &w](std::exception_ptr e) { rt.complete(*this, w, e); });
    co_await rt.wait(*this, w);
    if (rt.is_dead(dp)) {
      throw Error(ErrorCode::kPeerFailed, fmt::format("process {} is dead", dp));
    }
  }
}

namespace {

bool matches(const std::optional<int>& src, const std::optional<std::int64_t>& tag,
             const rail::Message& m) {
  return (!src || *src == m.src_task) && (!tag || *tag == m.tag);
}

}  // namespace

sched::Co<rail::Message> TaskContext::recv(std::optional<int> src,
                                           std::optional<std::int64_t> tag) {
  Runtime& rt = *rt_;
  if (!is_app()) throw Error(ErrorCode::kInvalidArgument, "helper tasks do not receive messages");
  auto& box = rt.mailbox_[rank_];
  for (auto it = box.begin(); it != box.end(); ++it) {
    if (matches(src, tag, *it)) {
      rail::Message m = std::move(*it);
      box.erase(it);
      ++rt.proc(process_).recv_from[static_cast<std::size_t>(m.src_process)];
      co_return m;
    }
  }
  if (src) {
    if (*src < 0 || *src >= rt.n_ranks()) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("source rank {}", *src));
    }
    if (rt.is_dead(rt.process_of(*src))) {
      throw Error(ErrorCode::kPeerFailed, fmt::format("rank {} is on a dead process", *src));
    }
  }
  std::optional<rail::Message> slot;
  Runtime::Waiter w;
  rt.recv_wait_[rank_] = Runtime::RecvWait{src, tag, &slot, &w, this};
  co_await rt.wait(*this, w);
  co_return std::move(*slot);
}

sched::Co<> TaskContext::barrier() { co_await rt_->collective(*this, 0.0); }

sched::Co<double> TaskContext::allreduce_max(double value) {
  co_return co_await rt_->collective(*this, value);
}

sched::Co<ckpt::CkptState> TaskContext::checkpoint() {
  co_return co_await rt_->checkpoint_collective(*this);
}

sched::Co<> TaskContext::fault_point(std::uint64_t step) {
  Runtime& rt = *rt_;
  if (!rt.fault_ || rt.fault_fired_ || rt.fault_->step != step) co_return;
  rt.fault_fired_ = true;
  rt.engine_.after(0, [&rt] { rt.trigger_fault(); });
  // The job stops here; this wait is never completed.
  Runtime::Waiter never;
  co_await rt.wait(*this, never);
}

void FaultPlan::validate(std::uint64_t iterations, int n_processes) const {
  if (step >= iterations) {
    throw Error(ErrorCode::kInvalidStep,
                fmt::format("fault step {} is not below {} iterations", step, iterations));
  }
  if (victims.empty()) throw Error(ErrorCode::kInvalidArgument, "fault plan without victims");
  for (int v : victims) {
    if (v < 0 || v >= n_processes) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("victim process {}", v));
    }
  }
}

// ---------------------------------------------------------------------------
// Runtime: construction and layout

Runtime::Runtime(config::NetConfig net, config::JobSpec job, RuntimeOptions opts)
    : Runtime(std::move(net), std::move(job), std::move(opts), nullptr, nullptr) {}

Runtime::Runtime(config::NetConfig net, config::JobSpec job, RuntimeOptions opts,
                 const std::vector<ckpt::ProcessImage>* images, const ckpt::Manifest* manifest)
    : net_(std::move(net)), job_(std::move(job)), opts_(std::move(opts)) {
  job_.validate();
  rails_ = net_.rails_for(job_.net_option);
  const config::RailSpec* ring = nullptr;
  for (const auto& r : rails_) {
    if (r.accepts_all_ring()) {
      ring = &r;
      break;
    }
  }
  if (ring == nullptr) {
    throw Error(ErrorCode::kNoRingRail,
                fmt::format("option '{}' has no gate-free ring rail", job_.net_option));
  }
  bool tcp_kvs = opts_.kvs == RuntimeOptions::KvsMode::kTcp ||
                 (opts_.kvs == RuntimeOptions::KvsMode::kAuto && ring->driver == config::Driver::kTcp);
  if (tcp_kvs) {
    kvs_server_ = std::make_unique<config::KvsServer>(1);
    kvs_ = std::make_unique<config::TcpKvs>("127.0.0.1", kvs_server_->port());
  } else {
    kvs_ = std::make_unique<config::InprocKvs>(1);
  }

  const auto n = static_cast<std::size_t>(job_.n_processes);
  procs_.resize(n);
  for (int p = 0; p < job_.n_processes; ++p) {
    Proc& P = procs_[static_cast<std::size_t>(p)];
    P.id = p;
    P.sched = std::make_unique<sched::Scheduler>(engine_, p, job_.lanes_per_process, job_.cost,
                                                 opts_.sched);
    P.rails = std::make_unique<rail::RailSet>(p, rails_);
    P.sent_to.assign(n, 0);
    P.recv_from.assign(n, 0);
  }

  std::string gen = "boot";
  if (images != nullptr) {
    engine_.set_now(manifest->virtual_ticks);
    epoch_ = manifest->epoch;
    routes_closed_ = true;
    restored_from_ = manifest->epoch;
    counters_.route_census = manifest->dynamic_routes;
    gen = fmt::format("restore{}", manifest->epoch);
    for (const auto& img : *images) {
      for (const auto& sec : img.rails) {
        const config::RailSpec* spec = procs_[static_cast<std::size_t>(img.process)].rails->find(sec.rail);
        if (spec == nullptr || !spec->checkpointable) {
          throw Error(ErrorCode::kConfigMismatch,
                      fmt::format("image of process {} holds rail '{}'", img.process, sec.rail));
        }
        for (const auto& e : sec.endpoints) {
          rails(img.process).add_endpoint(sec.rail, e.remote, rail::EndpointState::kConnected,
                                          e.kind, e.conn_info);
        }
      }
      for (const auto& t : img.tasks) restored_blobs_[t.rank] = t.blob;
    }
  }
  for (const auto& r : rails_) {
    bool wire = r.topology != config::Topology::kNone;
    // Checkpointable rails got their routes back from the images.
    if (images != nullptr && r.checkpointable) wire = false;
    if (wire) bootstrap_all(r, gen);
  }
}

Runtime::~Runtime() {
  // Task frames go first: they may reference contexts and bodies.
  for (auto& P : procs_) P.sched.reset();
}

Runtime::Proc& Runtime::proc(int p) {
  if (p < 0 || p >= job_.n_processes) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("process {}", p));
  }
  return procs_[static_cast<std::size_t>(p)];
}

const Runtime::Proc& Runtime::proc(int p) const { return const_cast<Runtime*>(this)->proc(p); }

int Runtime::alive_processes() const {
  return static_cast<int>(std::count_if(procs_.begin(), procs_.end(), [](const Proc& P) { return !P.dead; }));
}

int Runtime::process_of(int rank) const {
  if (rank < 0 || rank >= n_ranks()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("rank {}", rank));
  }
  return rank / job_.tasks_per_process;
}

std::string Runtime::config_hash() const { return config::config_hash(net_, job_); }

sched::Scheduler& Runtime::scheduler(int process) { return *proc(process).sched; }

rail::RailSet& Runtime::rails(int process) { return *proc(process).rails; }

bool Runtime::is_dead(int process) const { return proc(process).dead; }

TaskContext& Runtime::context(int rank) {
  auto it = rank_ctx_.find(rank);
  if (it == rank_ctx_.end()) throw Error(ErrorCode::kInvalidArgument, fmt::format("rank {}", rank));
  return *it->second;
}

// ---------------------------------------------------------------------------
// Tasks

void Runtime::spawn_app(TaskBody body) {
  bodies_.push_back(std::move(body));
  TaskBody& b = bodies_.back();
  for (int r = 0; r < n_ranks(); ++r) {
    int p = process_of(r);
    Proc& P = proc(p);
    if (P.dead) continue;
    int slot = r % job_.tasks_per_process;
    sched::LaneId lane = slot % job_.lanes_per_process;
    contexts_.push_back(TaskContext(this, p, static_cast<sched::TaskId>(P.sched->task_count()), lane,
                                    sched::TaskKind::kApp, r));
    TaskContext& ctx = contexts_.back();
    if (auto it = restored_blobs_.find(r); it != restored_blobs_.end()) ctx.restored_ = it->second;
    rank_ctx_[r] = &ctx;
    ctx.local_ = P.sched->spawn(lane, sched::TaskKind::kApp, b(ctx));
  }
}

TaskContext& Runtime::spawn_helper(int process, TaskBody body) {
  Proc& P = proc(process);
  bodies_.push_back(std::move(body));
  TaskBody& b = bodies_.back();
  contexts_.push_back(TaskContext(this, process, static_cast<sched::TaskId>(P.sched->task_count()), 0,
                                  sched::TaskKind::kHelper, -1));
  TaskContext& ctx = contexts_.back();
  ctx.local_ = P.sched->spawn(0, sched::TaskKind::kHelper, b(ctx));
  return ctx;
}

Runtime::RunStatus Runtime::run() {
  engine_.run();
  if (halted_) return RunStatus::kHalted;
  for (auto& P : procs_) {
    if (!P.dead && P.sched->first_error()) std::rethrow_exception(P.sched->first_error());
  }
  for (auto& P : procs_) {
    if (!P.dead) P.sched->check_complete();
  }
  return RunStatus::kCompleted;
}

void Runtime::halt() {
  halted_ = true;
  engine_.stop();
}

Ticks Runtime::app_finish_time() const {
  Ticks out = 0;
  for (const auto& [rank, ctx] : rank_ctx_) {
    const Proc& P = proc(ctx->process());
    if (P.dead) continue;
    const auto& info = P.sched->info(ctx->local_id());
    if (info.finish_time) out = std::max(out, *info.finish_time);
  }
  return out;
}

sched::Co<> Runtime::wait(TaskContext& ctx, Waiter& w) {
  if (!w.done) co_await ctx.sched().block(ctx.local_id(), sched::TaskState::kBlockedRecv);
  if (w.error) std::rethrow_exception(w.error);
}

void Runtime::complete(TaskContext& ctx, Waiter& w, std::exception_ptr error) {
  w.done = true;
  w.error = std::move(error);
  if (!proc(ctx.process()).dead) ctx.sched().wake(ctx.local_id());
}

// ---------------------------------------------------------------------------
// Faults

void Runtime::kill_process(int process) {
  Proc& P = proc(process);
  if (P.dead) return;
  P.dead = true;
  P.pending.clear();
  P.ckpt = CkptLocal{};
  P.sched->kill();
  auto peer_failed = [process] {
    return std::make_exception_ptr(
        Error(ErrorCode::kPeerFailed, fmt::format("process {} died", process)));
  };
  for (auto it = recv_wait_.begin(); it != recv_wait_.end();) {
    RecvWait& rw = it->second;
    if (rw.ctx->process() == process) {
      it = recv_wait_.erase(it);
    } else if (rw.src && process_of(*rw.src) == process) {
      RecvWait copy = rw;
      it = recv_wait_.erase(it);
      complete(*copy.ctx, *copy.waiter, peer_failed());
    } else {
      ++it;
    }
  }
  for (int r = process * job_.tasks_per_process; r < (process + 1) * job_.tasks_per_process; ++r) {
    mailbox_.erase(r);
  }
  // Pending collectives can never complete without the dead ranks.
  auto colls = std::move(collectives_);
  collectives_.clear();
  for (auto& [seq, c] : colls) {
    for (auto& [ctx, w, out] : c.waiting) {
      if (!proc(ctx->process()).dead) complete(*ctx, *w, peer_failed());
    }
  }
  auto fence = std::move(fence_);
  fence_ = Fence{};
  for (auto& [ctx, w] : fence.waiting) {
    if (!proc(ctx->process()).dead) complete(*ctx, *w, peer_failed());
  }
  for (auto& hook : kill_hooks_) hook(process);
}

void Runtime::trigger_fault() {
  if (fault_) {
    for (int v : fault_->victims) kill_process(v);
  }
  halt();
}

// ---------------------------------------------------------------------------
// Messaging

Ticks Runtime::hop_cost(const config::RailSpec& r, std::uint64_t bytes) const {
  return r.latency + job_.cost.net_per_byte * static_cast<Ticks>(bytes);
}

void Runtime::transmit_data(int src, const rail::Endpoint& ep, rail::Message msg) {
  rail::RailSet& rs = rails(src);
  const config::RailSpec& spec = rs.spec(ep.rail);
  Ticks cost = hop_cost(spec, msg.size());
  rail::Frame f;
  f.type = rail::FrameType::kData;
  f.src_process = static_cast<std::uint64_t>(msg.src_process);
  f.dst_process = static_cast<std::uint64_t>(msg.dst_process);
  f.src_task = static_cast<std::uint64_t>(msg.src_task);
  f.dst_task = static_cast<std::uint64_t>(msg.dst_task);
  f.tag = msg.tag;
  ++counters_.data_frames;
  counters_.data_bytes += msg.size();
  f.payload = std::move(msg.payload);
  Bytes wire = rail::encode_frame(f);
  rs.frame_sent(ep.rail);
  engine_.after(cost, [this, src, rail_name = ep.rail, wire = std::move(wire)] {
    rails(src).frame_arrived(rail_name);
    rail::Frame g = rail::decode_frame(wire);
    int dst = static_cast<int>(g.dst_process);
    if (proc(dst).dead) return;
    rail::Message m{static_cast<int>(g.src_task), static_cast<int>(g.dst_task),
                    static_cast<int>(g.src_process), dst, g.tag, std::move(g.payload), rail_name};
    deliver(std::move(m));
  });
}

void Runtime::deliver(rail::Message msg) {
  auto it = recv_wait_.find(msg.dst_task);
  if (it != recv_wait_.end() && matches(it->second.src, it->second.tag, msg)) {
    RecvWait w = it->second;
    recv_wait_.erase(it);
    ++proc(msg.dst_process).recv_from[static_cast<std::size_t>(msg.src_process)];
    *w.slot = std::move(msg);
    complete(*w.ctx, *w.waiter);
    return;
  }
  mailbox_[msg.dst_task].push_back(std::move(msg));
}

// ---------------------------------------------------------------------------
// Collectives

Ticks Runtime::collective_cost() const {
  Ticks latency = 0;
  for (const auto& r : rails_) {
    if (r.accepts_all_ring()) {
      latency = r.latency;
      break;
    }
  }
  auto n = static_cast<unsigned>(job_.n_processes);
  Ticks rounds = n <= 1 ? 0 : static_cast<Ticks>(std::bit_width(n - 1));
  return 2 * rounds * (latency + 8 * job_.cost.net_per_byte);
}

sched::Co<double> Runtime::collective(TaskContext& ctx, double value) {
  if (!ctx.is_app()) {
    throw Error(ErrorCode::kInvalidArgument, "helper tasks are not members of the application world");
  }
  if (alive_processes() != n_processes()) {
    throw Error(ErrorCode::kPeerFailed, "collective over a world with dead processes");
  }
  std::uint64_t seq = coll_seq_[ctx.rank()]++;
  Collective& c = collectives_[seq];
  c.acc = c.arrived == 0 ? value : std::max(c.acc, value);
  ++c.arrived;
  double out = 0;
  Waiter w;
  c.waiting.emplace_back(&ctx, &w, &out);
  if (c.arrived == n_ranks()) {
    Collective done = std::move(c);
    collectives_.erase(seq);
    engine_.after(collective_cost(), [this, done = std::move(done)] {
      for (auto& [cx, cw, cout] : done.waiting) {
        if (proc(cx->process()).dead) continue;
        *cout = done.acc;
        complete(*cx, *cw);
      }
    });
  }
  co_await wait(ctx, w);
  co_return out;
}

}  // namespace mcr
