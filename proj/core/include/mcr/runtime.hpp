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

#ifndef MCR_RUNTIME_HPP_
#define MCR_RUNTIME_HPP_

#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mcr/bytes.hpp"
#include "mcr/ckpt.hpp"
#include "mcr/config.hpp"
#include "mcr/kvs.hpp"
#include "mcr/multirail.hpp"
#include "mcr/sched.hpp"
#include "mcr/signaling.hpp"

namespace mcr {

class Runtime;
class TaskContext;

using TaskBody = std::function<sched::Co<>(TaskContext&)>;

struct RuntimeOptions {
  std::string job_id = "job";
  bool checkpointing_enabled = true;
  sched::SchedOptions sched;
  // Virtual-time budget for an on-demand connection handshake.
  Ticks connect_timeout = 1'000'000;
  enum class KvsMode { kAuto, kInproc, kTcp };
  // kAuto: a localhost TCP registry when the bootstrap ring runs over tcp,
  // an in-process store otherwise.
  KvsMode kvs = KvsMode::kAuto;
};

struct JobCounters {
  std::uint64_t data_frames = 0;
  std::uint64_t data_bytes = 0;
  std::uint64_t control_frames = 0;
  std::uint64_t local_messages = 0;
  // Process pairs joined on demand, over the whole run.
  std::uint64_t connections = 0;
  // Pairs joined on demand since the last checkpoint or restart (0 while
  // no route was ever closed).
  std::uint64_t reconnects = 0;
  std::uint64_t checkpoints = 0;
  // Routes that had to be rebuilt on demand, counted when rails were last
  // closed for a checkpoint.
  std::uint64_t route_census = 0;
};

struct CkptEvent {
  enum class Kind { kImageWrite, kManifestWrite, kReturn };
  Kind kind = Kind::kReturn;
  std::uint64_t epoch = 0;
  int process = 0;
  int rank = -1;
  ckpt::CkptState state = ckpt::CkptState::kError;
  Ticks tick = 0;
};

// Virtual-time extent of one collective checkpoint.
struct CkptSpan {
  std::uint64_t epoch = 0;
  Ticks first_entry = 0;
  Ticks last_entry = 0;
  Ticks release = 0;
  ckpt::CkptState state = ckpt::CkptState::kError;
};

struct ControlDelivery {
  signal::ControlMessage msg;
  int at = 0;
  Ticks tick = 0;
};

// Handle through which a task body talks to the runtime. All awaitables
// must be awaited by the task that owns the context.
class TaskContext {
 public:
  int rank() const { return rank_; }  // app rank, or -1 for helpers
  int process() const { return process_; }
  sched::TaskId local_id() const { return local_; }
  sched::LaneId lane() const { return lane_; }
  sched::TaskKind kind() const { return kind_; }
  bool is_app() const { return kind_ == sched::TaskKind::kApp; }
  int n_ranks() const;
  Runtime& runtime() { return *rt_; }
  const CostModel& cost() const;
  Ticks now() const;

  sched::Scheduler::HoldAwaiter compute(std::uint64_t units);
  sched::Scheduler::HoldAwaiter hold(Ticks ticks);
  sched::Scheduler::YieldAwaiter yield_now();
  sched::Scheduler::BlockAwaiter sleep_for(Ticks ticks);
  // Storage I/O; holds the lane unless io_yield is set.
  sched::Scheduler::BlockAwaiter io(Ticks ticks);

  // Throws kPeerFailed, kNoRouteToProcess, kConnectTimeout, kInvalidArgument.
  sched::Co<> send(int dst_rank, std::int64_t tag, Bytes payload);
  // nullopt filters match anything. Throws kPeerFailed when the named
  // source's process is dead.
  sched::Co<rail::Message> recv(std::optional<int> src, std::optional<std::int64_t> tag);

  // Collectives over the application ranks; helpers may not take part.
  sched::Co<> barrier();
  sched::Co<double> allreduce_max(double value);

  // Collective transparent checkpoint over every application rank.
  sched::Co<ckpt::CkptState> checkpoint();
  // Serializer captured into process images.
  void set_save_handler(std::function<Bytes()> save) { save_ = std::move(save); }
  // Restarted tasks find their checkpointed blob here.
  bool restarted() const { return restored_.has_value(); }
  const Bytes& restored_blob() const;
  // Records the RESTART outcome of the checkpoint call the job resumed from.
  ckpt::CkptState restart_state();

  // Halts the job here if the runtime's fault plan targets `step`.
  sched::Co<> fault_point(std::uint64_t step);

 private:
  friend class Runtime;
  TaskContext(Runtime* rt, int process, sched::TaskId local, sched::LaneId lane,
              sched::TaskKind kind, int rank)
      : rt_(rt), process_(process), local_(local), lane_(lane), kind_(kind), rank_(rank) {}

  sched::Scheduler& sched() const;

  Runtime* rt_;
  int process_;
  sched::TaskId local_;
  sched::LaneId lane_;
  sched::TaskKind kind_;
  int rank_;
  std::function<Bytes()> save_;
  std::optional<Bytes> restored_;
};

struct FaultPlan {
  std::uint64_t step = 0;
  std::vector<int> victims;  // process ids

  // Throws kInvalidStep (step >= iterations) or kInvalidArgument (no victims,
  // unknown process).
  void validate(std::uint64_t iterations, int n_processes) const;
};

class Runtime {
 public:
  Runtime(config::NetConfig net, config::JobSpec job, RuntimeOptions opts = {});
  ~Runtime();
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  // Rebuilds a job from a manifest. Throws kMissingImage, kCrcMismatch,
  // kConfigMismatch.
  static std::unique_ptr<Runtime> restore(const std::filesystem::path& manifest,
                                          config::NetConfig net, config::JobSpec job,
                                          RuntimeOptions opts = {});

  // --- layout ---
  int n_processes() const { return job_.n_processes; }
  int tasks_per_process() const { return job_.tasks_per_process; }
  int n_ranks() const { return job_.n_tasks(); }
  int process_of(int rank) const;
  const config::JobSpec& job() const { return job_; }
  const config::NetConfig& net() const { return net_; }
  const RuntimeOptions& options() const { return opts_; }
  const std::vector<config::RailSpec>& rail_specs() const { return rails_; }
  std::string config_hash() const;

  // --- tasks ---
  // One task per application rank, slot s of a process on lane s % lanes.
  void spawn_app(TaskBody body);
  // Oversubscribed on lane 0 of `process`.
  TaskContext& spawn_helper(int process, TaskBody body);
  TaskContext& context(int rank);

  enum class RunStatus { kCompleted, kHalted };
  // Drives the job until every task finishes or the job is halted. Rethrows
  // the first error escaping a task; throws kDeadlock with a blocked dump.
  RunStatus run();
  void halt();
  bool halted() const { return halted_; }

  sched::Engine& engine() { return engine_; }
  Ticks now() const { return engine_.now(); }
  sched::Scheduler& scheduler(int process);
  // Latest finish time over all application tasks.
  Ticks app_finish_time() const;

  // --- faults ---
  void set_fault_plan(FaultPlan plan) { fault_ = std::move(plan); }
  void kill_process(int process);
  bool is_dead(int process) const;
  void add_kill_hook(std::function<void(int process)> hook) { kill_hooks_.push_back(std::move(hook)); }

  // --- network ---
  rail::RailSet& rails(int process);
  // On every process. Throws kRailBusy (nothing closed) or kUnknownRail.
  std::size_t close_rail(const std::string& rail);
  void reopen_rail(const std::string& rail);

  using ConnectCallback = std::function<void(std::exception_ptr)>;
  // Completes immediately if the endpoint exists. The callback may run
  // before this returns. Throws kRailClosed for self or closed local rail.
  void request_connection(int origin, int target, const std::string& rail, ConnectCallback done);
  // Routes a control message from msg.origin (ttl defaults to N). Delivery
  // happens as the engine runs.
  void deliver_control(signal::ControlMessage msg);
  const std::vector<ControlDelivery>& control_deliveries() const { return deliveries_; }
  // Errors raised while forwarding control messages (NoProgress, TtlExceeded).
  const std::vector<std::string>& routing_errors() const { return routing_errors_; }
  signal::RouteView route_view(int process, std::uint64_t frame_payload) const;
  // Pairs whose routes would have to be rebuilt on demand after a checkpoint.
  std::uint64_t route_census() const;

  const JobCounters& counters() const { return counters_; }

  // --- transparent checkpoint bookkeeping ---
  const std::vector<CkptEvent>& ckpt_events() const { return ckpt_events_; }
  const std::vector<CkptSpan>& ckpt_spans() const { return ckpt_spans_; }
  std::uint64_t epoch() const { return epoch_; }
  std::optional<std::filesystem::path> last_manifest() const { return last_manifest_; }
  // Extra key=value pairs written into every manifest.
  std::map<std::string, std::string>& manifest_extra() { return manifest_extra_; }
  bool restored() const { return restored_from_.has_value(); }
  // Epoch the job restarted from (0 for a fresh job).
  std::uint64_t restored_epoch() const { return restored_from_.value_or(0); }

  // Virtual cost of one synchronized collective (barrier, reduction, fence).
  Ticks collective_cost() const;

 private:
  friend class TaskContext;

  struct Waiter {
    bool done = false;
    std::exception_ptr error;
  };
  struct RecvWait {
    std::optional<int> src;
    std::optional<std::int64_t> tag;
    std::optional<rail::Message>* slot = nullptr;
    Waiter* waiter = nullptr;
    TaskContext* ctx = nullptr;
  };
  struct PendingConn {
    std::uint64_t id = 0;
    std::vector<ConnectCallback> callbacks;
  };
  struct Collective {
    int arrived = 0;
    double acc = 0;
    std::vector<std::tuple<TaskContext*, Waiter*, double*>> waiting;
  };
  struct CkptLocal {
    int arrived = 0;
    std::vector<std::pair<TaskContext*, Waiter*>> waiting;
    ckpt::CkptState result = ckpt::CkptState::kError;
    TaskContext* master = nullptr;
    Waiter* master_wait = nullptr;
    bool verdict_ok = false;
    std::uint64_t epoch = 0;
    Ticks release_at = 0;
  };
  struct CkptCoord {
    std::map<int, std::pair<std::vector<std::uint64_t>, std::vector<std::uint64_t>>> tokens;
  };
  struct Fence {
    int arrived = 0;
    std::vector<std::pair<TaskContext*, Waiter*>> waiting;
  };
  struct Proc {
    int id = 0;
    bool dead = false;
    std::unique_ptr<sched::Scheduler> sched;
    std::unique_ptr<rail::RailSet> rails;
    std::vector<std::uint64_t> sent_to;
    std::vector<std::uint64_t> recv_from;
    std::map<std::pair<std::string, int>, PendingConn> pending;
    CkptLocal ckpt;
  };

  Runtime(config::NetConfig net, config::JobSpec job, RuntimeOptions opts,
          const std::vector<ckpt::ProcessImage>* images, const ckpt::Manifest* manifest);

  Proc& proc(int p);
  const Proc& proc(int p) const;
  int alive_processes() const;
  sched::Co<> wait(TaskContext& ctx, Waiter& w);
  void complete(TaskContext& ctx, Waiter& w, std::exception_ptr error = nullptr);

  // Bootstrap of ring (and, at job start, full) rails through the KVS.
  void bootstrap_put(int p, const config::RailSpec& r, const std::string& gen);
  void bootstrap_link(int p, const config::RailSpec& r, const std::string& gen);
  void bootstrap_all(const config::RailSpec& r, const std::string& gen);
  std::vector<int> bootstrap_peers(int p, const config::RailSpec& r) const;

  // Messaging.
  void deliver(rail::Message msg);
  void transmit_data(int src, const rail::Endpoint& ep, rail::Message msg);
  Ticks hop_cost(const config::RailSpec& r, std::uint64_t bytes) const;

  // Signaling.
  void route_control(int at, signal::ControlMessage msg);
  void handle_control(int at, const signal::ControlMessage& msg);
  void on_conn_request(int at, const signal::ControlMessage& msg);
  void on_conn_ack(int at, const signal::ControlMessage& msg);
  void note_connected(int p, const std::string& rail, int q);
  void finish_pending(int p, const std::string& rail, int q, std::exception_ptr error);

  // Collectives.
  sched::Co<double> collective(TaskContext& ctx, double value);

  // Transparent checkpoint.
  sched::Co<ckpt::CkptState> checkpoint_collective(TaskContext& ctx);
  void on_barrier_token(int at, const signal::ControlMessage& msg);
  Ticks verdict_bound() const;
  void fence_arrive(TaskContext& ctx, Waiter& w);
  void log_ckpt(CkptEvent::Kind kind, std::uint64_t epoch, int process, int rank,
                ckpt::CkptState state);
  ckpt::ProcessImage build_image(int p, std::uint64_t epoch);
  void write_manifest(std::uint64_t epoch);

  void trigger_fault();

  config::NetConfig net_;
  config::JobSpec job_;
  RuntimeOptions opts_;
  std::vector<config::RailSpec> rails_;
  sched::Engine engine_;
  std::unique_ptr<config::KvsServer> kvs_server_;
  std::unique_ptr<config::Kvs> kvs_;
  std::uint64_t bootstrap_gen_ = 0;

  std::vector<Proc> procs_;
  std::deque<TaskBody> bodies_;
  std::deque<TaskContext> contexts_;
  std::map<int, TaskContext*> rank_ctx_;
  std::map<int, std::deque<rail::Message>> mailbox_;
  std::map<int, RecvWait> recv_wait_;

  std::map<int, std::uint64_t> coll_seq_;
  std::map<std::uint64_t, Collective> collectives_;

  std::uint64_t epoch_ = 0;
  std::uint64_t ckpt_round_ = 0;
  CkptCoord coord_;
  Fence fence_;
  std::vector<Ticks> ckpt_entries_;
  std::uint64_t census_acc_ = 0;
  // Set once a checkpoint or restart has torn routes down.
  bool routes_closed_ = false;
  std::vector<CkptEvent> ckpt_events_;
  std::vector<CkptSpan> ckpt_spans_;
  std::optional<std::filesystem::path> last_manifest_;
  std::map<std::string, std::string> manifest_extra_;
  std::optional<std::uint64_t> restored_from_;
  std::map<int, Bytes> restored_blobs_;

  std::uint64_t next_conn_id_ = 1;
  std::vector<ControlDelivery> deliveries_;
  std::vector<std::string> routing_errors_;
  JobCounters counters_;

  std::optional<FaultPlan> fault_;
  bool fault_fired_ = false;
  bool halted_ = false;
  std::vector<std::function<void(int)>> kill_hooks_;
};

}  // namespace mcr

#endif  // MCR_RUNTIME_HPP_
