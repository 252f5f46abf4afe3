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

#ifndef MCR_SCHED_HPP_
#define MCR_SCHED_HPP_

#include <coroutine>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "mcr/cost_model.hpp"

namespace mcr::sched {

using TaskId = int;
using LaneId = int;

// Discrete-event loop shared by every logical process of a job. Events at
// the same tick run in insertion order, which makes runs reproducible.
class Engine {
 public:
  using Action = std::function<void()>;

  Ticks now() const { return now_; }
  // Only valid while no events are pending (used when resuming a job).
  void set_now(Ticks t);

  void at(Ticks when, Action action);
  void after(Ticks delay, Action action) { at(now_ + delay, std::move(action)); }

  bool run_one();
  // Runs until the queue drains or stop() is called.
  void run();
  void stop() { stopped_ = true; }
  bool stopped() const { return stopped_; }
  void clear();

  std::size_t pending() const { return queue_.size(); }
  std::uint64_t executed() const { return executed_; }

 private:
  struct Event {
    Ticks at;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };

  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  Ticks now_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t executed_ = 0;
  bool stopped_ = false;
};

namespace detail {

struct PromiseBase {
  std::coroutine_handle<> continuation = std::noop_coroutine();
  std::exception_ptr error;

  std::suspend_always initial_suspend() noexcept { return {}; }

  struct FinalAwaiter {
    bool await_ready() noexcept { return false; }
    template <typename P>
    std::coroutine_handle<> await_suspend(std::coroutine_handle<P> h) noexcept {
      return h.promise().continuation;
    }
    void await_resume() noexcept {}
  };
  FinalAwaiter final_suspend() noexcept { return {}; }
  void unhandled_exception() { error = std::current_exception(); }
};

}  // namespace detail

// Lazily started coroutine. Awaiting a Co runs it to completion on the
// awaiting task (symmetric transfer); a top-level Co is driven by the
// Scheduler.
template <typename T = void>
class [[nodiscard]] Co {
 public:
  struct promise_type : detail::PromiseBase {
    std::optional<T> value;
    Co get_return_object() { return Co(std::coroutine_handle<promise_type>::from_promise(*this)); }
    template <typename U>
    void return_value(U&& v) {
      value.emplace(std::forward<U>(v));
    }
  };
  using Handle = std::coroutine_handle<promise_type>;

  Co(Co&& o) noexcept : h_(std::exchange(o.h_, nullptr)) {}
  Co& operator=(Co&& o) noexcept {
    if (this != &o) {
      if (h_) h_.destroy();
      h_ = std::exchange(o.h_, nullptr);
    }
    return *this;
  }
  ~Co() {
    if (h_) h_.destroy();
  }

  bool await_ready() const noexcept { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> caller) noexcept {
    h_.promise().continuation = caller;
    return h_;
  }
  T await_resume() {
    if (h_.promise().error) std::rethrow_exception(h_.promise().error);
    return std::move(*h_.promise().value);
  }

 private:
  explicit Co(Handle h) : h_(h) {}
  Handle h_;
};

template <>
class [[nodiscard]] Co<void> {
 public:
  struct promise_type : detail::PromiseBase {
    Co get_return_object() { return Co(std::coroutine_handle<promise_type>::from_promise(*this)); }
    void return_void() {}
  };
  using Handle = std::coroutine_handle<promise_type>;

  Co(Co&& o) noexcept : h_(std::exchange(o.h_, nullptr)) {}
  Co& operator=(Co&& o) noexcept {
    if (this != &o) {
      if (h_) h_.destroy();
      h_ = std::exchange(o.h_, nullptr);
    }
    return *this;
  }
  ~Co() {
    if (h_) h_.destroy();
  }

  bool await_ready() const noexcept { return false; }
  std::coroutine_handle<> await_suspend(std::coroutine_handle<> caller) noexcept {
    h_.promise().continuation = caller;
    return h_;
  }
  void await_resume() {
    if (h_.promise().error) std::rethrow_exception(h_.promise().error);
  }

  // Scheduler-side access to the root frame.
  Handle handle() const { return h_; }
  Handle release() { return std::exchange(h_, nullptr); }

 private:
  explicit Co(Handle h) : h_(h) {}
  Handle h_;
};

enum class TaskKind { kApp, kHelper };
enum class TaskState { kReady, kRunning, kYielded, kBlockedRecv, kBlockedIo, kDone };

const char* to_string(TaskKind k);
const char* to_string(TaskState s);

struct TaskInfo {
  TaskId id = 0;
  TaskKind kind = TaskKind::kApp;
  TaskState state = TaskState::kReady;
  LaneId lane = 0;
  std::optional<Ticks> finish_time;
};

struct TraceEvent {
  Ticks tick;
  int process;
  LaneId lane;
  TaskId task;
  const char* event;
};

struct SchedOptions {
  // Checkpoint I/O becomes a blocking wait that frees the lane instead of
  // occupying it.
  bool io_yield = false;
  // Charge ctx_switch * process_switch_multiplier per switch, modelling
  // helpers implemented as separate OS processes.
  bool process_mode = false;
  bool trace = false;
};

using FinishMap = std::map<TaskId, Ticks>;

// Cooperative, non-preemptive scheduler of one logical process. Each lane
// stands for a core; tasks never migrate between lanes.
//
// Switch accounting: an explicit yield always costs one context switch,
// even when the yielding task is picked again. When a task blocks or
// finishes and another task is queued, dispatching it costs one switch. A
// task woken onto an idle lane starts immediately.
class Scheduler {
 public:
  Scheduler(Engine& engine, int process, int n_lanes, CostModel cost, SchedOptions opts = {});
  ~Scheduler();
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  // Throws Error(kUnknownLane).
  TaskId spawn(LaneId lane, TaskKind kind, Co<> body);

  class HoldAwaiter;
  class YieldAwaiter;
  class BlockAwaiter;

  // Keeps the lane busy for `ticks` (computation, non-yielding I/O).
  HoldAwaiter hold(TaskId task, Ticks ticks);
  HoldAwaiter compute(TaskId task, std::uint64_t units);
  YieldAwaiter yield_now(TaskId task);
  // Suspends until wake() or fail(); frees the lane meanwhile.
  BlockAwaiter block(TaskId task, TaskState reason);
  // Blocks in kBlockedIo until now + ticks.
  BlockAwaiter sleep_for(TaskId task, Ticks ticks);
  // Storage I/O: a lane-holding wait, or a lane-freeing sleep with io_yield.
  BlockAwaiter io(TaskId task, Ticks ticks);

  // Re-readies a blocked task. Returns false if it was not blocked.
  bool wake(TaskId task);
  // Wakes a blocked task so that its pending await rethrows `error`.
  bool fail(TaskId task, std::exception_ptr error);

  // Destroys every task frame; pending events for this process are ignored.
  void kill();
  bool killed() const { return killed_; }

  // Runs the engine to exhaustion; throws kDeadlock (with a dump of the
  // blocked tasks) if some task never finished, or rethrows the first error
  // that escaped a task body.
  FinishMap run_to_completion();
  void check_complete() const;
  std::string blocked_dump() const;

  int process() const { return process_; }
  int lane_count() const { return static_cast<int>(lanes_.size()); }
  const TaskInfo& info(TaskId task) const;
  std::size_t task_count() const { return tasks_.size(); }
  bool all_done() const;
  FinishMap finish_times() const;
  Ticks lane_clock(LaneId lane) const;
  std::size_t switches() const { return switches_; }
  Ticks switch_cost() const;
  const CostModel& cost() const { return cost_; }
  const SchedOptions& options() const { return opts_; }
  Engine& engine() { return engine_; }
  std::exception_ptr first_error() const { return first_error_; }

  const std::vector<TraceEvent>& trace() const { return trace_; }
  // "tick,process,lane,task,event" with a header line.
  std::string trace_csv() const;

  // Called after a task's body returns (not when killed).
  std::function<void(TaskId)> on_task_done;

 private:
  struct Task {
    TaskInfo info;
    Co<>::Handle root;
    std::coroutine_handle<> resume_point;
    std::exception_ptr pending_error;
    std::uint64_t wait_gen = 0;
  };
  struct Lane {
    LaneId id;
    std::deque<TaskId> run_queue;
    std::optional<TaskId> occupant;
    Ticks clock = 0;
  };

  Task& task(TaskId id);
  void dispatch(LaneId lane, TaskId id, Ticks start);
  void resume(TaskId id);
  void release_lane(LaneId lane);
  void finish(TaskId id);
  void record(LaneId lane, TaskId task, const char* event);

  Engine& engine_;
  int process_;
  CostModel cost_;
  SchedOptions opts_;
  std::vector<Lane> lanes_;
  std::vector<Task> tasks_;
  std::size_t switches_ = 0;
  bool killed_ = false;
  std::exception_ptr first_error_;
  std::vector<TraceEvent> trace_;
  std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);

 public:
  class HoldAwaiter {
   public:
    HoldAwaiter(Scheduler* s, TaskId t, Ticks ticks) : s_(s), t_(t), ticks_(ticks) {}
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume() const noexcept {}

   private:
    Scheduler* s_;
    TaskId t_;
    Ticks ticks_;
  };

  class YieldAwaiter {
   public:
    YieldAwaiter(Scheduler* s, TaskId t) : s_(s), t_(t) {}
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume() const noexcept {}

   private:
    Scheduler* s_;
    TaskId t_;
  };

  class BlockAwaiter {
   public:
    // mode: 0 = plain block, 1 = timed sleep, 2 = lane-holding I/O
    BlockAwaiter(Scheduler* s, TaskId t, TaskState reason, Ticks ticks, int mode)
        : s_(s), t_(t), reason_(reason), ticks_(ticks), mode_(mode) {}
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h);
    void await_resume();

   private:
    Scheduler* s_;
    TaskId t_;
    TaskState reason_;
    Ticks ticks_;
    int mode_;
  };
};

}  // namespace mcr::sched

#endif  // MCR_SCHED_HPP_
