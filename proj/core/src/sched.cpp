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

#include "mcr/sched.hpp"

#include <fmt/format.h>

#include "mcr/error.hpp"

namespace mcr::sched {

void Engine::set_now(Ticks t) {
  if (!queue_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "cannot move the clock with events pending");
  }
  now_ = t;
}

void Engine::at(Ticks when, Action action) {
  if (when < now_) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("event scheduled in the past ({} < {})", when, now_));
  }
  queue_.push(Event{when, seq_++, std::move(action)});
}

bool Engine::run_one() {
  if (queue_.empty()) return false;
  // priority_queue::top is const; the action is moved out before pop.
  Event ev = std::move(const_cast<Event&>(queue_.top()));
  queue_.pop();
  now_ = ev.at;
  ++executed_;
  ev.action();
  return true;
}

void Engine::run() {
  stopped_ = false;
  while (!stopped_ && run_one()) {
  }
}

void Engine::clear() {
  while (!queue_.empty()) queue_.pop();
}

const char* to_string(TaskKind k) { return k == TaskKind::kApp ? "app" : "helper"; }

const char* to_string(TaskState s) {
  switch (s) {
    case TaskState::kReady: return "ready";
    case TaskState::kRunning: return "running";
    case TaskState::kYielded: return "yielded";
    case TaskState::kBlockedRecv: return "blocked_recv";
    case TaskState::kBlockedIo: return "blocked_io";
    case TaskState::kDone: return "done";
  }
  return "?";
}

Scheduler::Scheduler(Engine& engine, int process, int n_lanes, CostModel cost, SchedOptions opts)
    : engine_(engine), process_(process), cost_(cost), opts_(opts) {
  if (n_lanes < 1) throw Error(ErrorCode::kInvalidArgument, "a process needs at least one lane");
  cost_.validate();
  lanes_.reserve(static_cast<std::size_t>(n_lanes));
  for (int i = 0; i < n_lanes; ++i) lanes_.push_back(Lane{i, {}, std::nullopt, engine.now()});
}

Scheduler::~Scheduler() {
  *alive_ = false;
  for (auto& t : tasks_) {
    if (t.root) t.root.destroy();
  }
}

Scheduler::Task& Scheduler::task(TaskId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= tasks_.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown task {}", id));
  }
  return tasks_[static_cast<std::size_t>(id)];
}

const TaskInfo& Scheduler::info(TaskId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tasks_.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown task {}", id));
  }
  return tasks_[static_cast<std::size_t>(id)].info;
}

Ticks Scheduler::switch_cost() const {
  return opts_.process_mode ? cost_.ctx_switch * cost_.process_switch_multiplier
                            : cost_.ctx_switch;
}

void Scheduler::record(LaneId lane, TaskId task, const char* event) {
  if (opts_.trace) trace_.push_back(TraceEvent{engine_.now(), process_, lane, task, event});
}

TaskId Scheduler::spawn(LaneId lane, TaskKind kind, Co<> body) {
  if (lane < 0 || lane >= lane_count()) {
    throw Error(ErrorCode::kUnknownLane,
                fmt::format("lane {} on a process with {} lanes", lane, lane_count()));
  }
  TaskId id = static_cast<TaskId>(tasks_.size());
  Task t;
  t.info = TaskInfo{id, kind, TaskState::kReady, lane, std::nullopt};
  t.root = body.release();
  t.resume_point = t.root;
  tasks_.push_back(std::move(t));
  record(lane, id, "spawn");
  Lane& l = lanes_[static_cast<std::size_t>(lane)];
  if (!l.occupant) {
    l.occupant = id;
    dispatch(lane, id, engine_.now());
  } else {
    l.run_queue.push_back(id);
  }
  return id;
}

void Scheduler::dispatch(LaneId lane, TaskId id, Ticks start) {
  std::weak_ptr<bool> alive = alive_;
  engine_.at(start, [this, alive, lane, id] {
    if (alive.expired() || killed_) return;
    Lane& l = lanes_[static_cast<std::size_t>(lane)];
    l.clock = engine_.now();
    record(lane, id, "run");
    resume(id);
  });
}

void Scheduler::resume(TaskId id) {
  Task& t = task(id);
  t.info.state = TaskState::kRunning;
  lanes_[static_cast<std::size_t>(t.info.lane)].clock = engine_.now();
  std::coroutine_handle<> h = std::exchange(t.resume_point, nullptr);
  h.resume();
  // The body may have spawned tasks; re-fetch the record.
  if (!killed_ && task(id).root.done()) finish(id);
}

void Scheduler::finish(TaskId id) {
  Task& t = task(id);
  t.info.state = TaskState::kDone;
  t.info.finish_time = engine_.now();
  record(t.info.lane, id, "done");
  if (t.root.promise().error && !first_error_) {
    first_error_ = t.root.promise().error;
    engine_.stop();
  }
  LaneId lane = t.info.lane;
  t.root.destroy();
  t.root = nullptr;
  if (on_task_done) on_task_done(id);
  release_lane(lane);
}

void Scheduler::release_lane(LaneId lane) {
  Lane& l = lanes_[static_cast<std::size_t>(lane)];
  l.occupant.reset();
  if (l.run_queue.empty()) return;
  TaskId next = l.run_queue.front();
  l.run_queue.pop_front();
  l.occupant = next;
  ++switches_;
  record(lane, next, "switch");
  dispatch(lane, next, engine_.now() + switch_cost());
}

bool Scheduler::wake(TaskId id) {
  if (killed_) return false;
  Task& t = task(id);
  if (t.info.state != TaskState::kBlockedRecv && t.info.state != TaskState::kBlockedIo) {
    return false;
  }
  t.info.state = TaskState::kReady;
  ++t.wait_gen;
  record(t.info.lane, id, "ready");
  Lane& l = lanes_[static_cast<std::size_t>(t.info.lane)];
  if (!l.occupant) {
    l.occupant = id;
    dispatch(t.info.lane, id, engine_.now());
  } else {
    l.run_queue.push_back(id);
  }
  return true;
}

bool Scheduler::fail(TaskId id, std::exception_ptr error) {
  Task& t = task(id);
  if (t.info.state != TaskState::kBlockedRecv && t.info.state != TaskState::kBlockedIo) {
    return false;
  }
  t.pending_error = std::move(error);
  return wake(id);
}

void Scheduler::kill() {
  killed_ = true;
  for (auto& t : tasks_) {
    if (t.root) {
      t.root.destroy();
      t.root = nullptr;
    }
    t.resume_point = nullptr;
  }
  for (auto& l : lanes_) {
    l.run_queue.clear();
    l.occupant.reset();
  }
}

bool Scheduler::all_done() const {
  for (const auto& t : tasks_)
    if (t.info.state != TaskState::kDone) return false;
  return true;
}

FinishMap Scheduler::finish_times() const {
  FinishMap out;
  for (const auto& t : tasks_)
    if (t.info.finish_time) out[t.info.id] = *t.info.finish_time;
  return out;
}

Ticks Scheduler::lane_clock(LaneId lane) const {
  if (lane < 0 || lane >= lane_count()) {
    throw Error(ErrorCode::kUnknownLane, fmt::format("lane {}", lane));
  }
  return lanes_[static_cast<std::size_t>(lane)].clock;
}

std::string Scheduler::blocked_dump() const {
  std::string out;
  for (const auto& t : tasks_) {
    if (t.info.state == TaskState::kDone) continue;
    out += fmt::format("[process {} task {} ({}) lane {}: {}]", process_, t.info.id,
                       to_string(t.info.kind), t.info.lane, to_string(t.info.state));
  }
  return out;
}

void Scheduler::check_complete() const {
  if (first_error_) std::rethrow_exception(first_error_);
  if (!killed_ && !all_done()) {
    throw Error(ErrorCode::kDeadlock, "no pending events; blocked tasks: " + blocked_dump());
  }
}

FinishMap Scheduler::run_to_completion() {
  engine_.run();
  check_complete();
  return finish_times();
}

std::string Scheduler::trace_csv() const {
  std::string out = "tick,process,lane,task,event\n";
  for (const auto& e : trace_) {
    out += fmt::format("{},{},{},{},{}\n", e.tick, e.process, e.lane, e.task, e.event);
  }
  return out;
}

Scheduler::HoldAwaiter Scheduler::hold(TaskId task, Ticks ticks) {
  return HoldAwaiter(this, task, ticks);
}

Scheduler::HoldAwaiter Scheduler::compute(TaskId task, std::uint64_t units) {
  return HoldAwaiter(this, task, static_cast<Ticks>(units) * cost_.compute_tick);
}

Scheduler::YieldAwaiter Scheduler::yield_now(TaskId task) { return YieldAwaiter(this, task); }

Scheduler::BlockAwaiter Scheduler::block(TaskId task, TaskState reason) {
  return BlockAwaiter(this, task, reason, 0, 0);
}

Scheduler::BlockAwaiter Scheduler::sleep_for(TaskId task, Ticks ticks) {
  return BlockAwaiter(this, task, TaskState::kBlockedIo, ticks, 1);
}

Scheduler::BlockAwaiter Scheduler::io(TaskId task, Ticks ticks) {
  return BlockAwaiter(this, task, TaskState::kBlockedIo, ticks, opts_.io_yield ? 1 : 2);
}

void Scheduler::HoldAwaiter::await_suspend(std::coroutine_handle<> h) {
  Task& t = s_->task(t_);
  t.resume_point = h;
  Scheduler* s = s_;
  TaskId id = t_;
  std::weak_ptr<bool> alive = s->alive_;
  s->engine_.after(ticks_, [s, alive, id] {
    if (alive.expired() || s->killed_) return;
    s->resume(id);
  });
}

void Scheduler::YieldAwaiter::await_suspend(std::coroutine_handle<> h) {
  Task& t = s_->task(t_);
  t.resume_point = h;
  t.info.state = TaskState::kYielded;
  s_->record(t.info.lane, t_, "yield");
  Lane& l = s_->lanes_[static_cast<std::size_t>(t.info.lane)];
  l.run_queue.push_back(t_);
  s_->release_lane(t.info.lane);
}

void Scheduler::BlockAwaiter::await_suspend(std::coroutine_handle<> h) {
  Task& t = s_->task(t_);
  t.resume_point = h;
  if (mode_ == 2) {
    // Non-yielding I/O: the task keeps its lane for the whole transfer.
    Scheduler* s = s_;
    TaskId id = t_;
    std::weak_ptr<bool> alive = s->alive_;
    s->engine_.after(ticks_, [s, alive, id] {
      if (alive.expired() || s->killed_) return;
      s->resume(id);
    });
    return;
  }
  t.info.state = reason_;
  s_->record(t.info.lane, t_, reason_ == TaskState::kBlockedIo ? "block_io" : "block_recv");
  if (mode_ == 1) {
    Scheduler* s = s_;
    TaskId id = t_;
    std::uint64_t gen = t.wait_gen;
    std::weak_ptr<bool> alive = s->alive_;
    s->engine_.after(ticks_, [s, alive, id, gen] {
      if (alive.expired() || s->killed_) return;
      if (s->task(id).wait_gen == gen) s->wake(id);
    });
  }
  s_->release_lane(t.info.lane);
}

void Scheduler::BlockAwaiter::await_resume() {
  Task& t = s_->task(t_);
  if (t.pending_error) std::rethrow_exception(std::exchange(t.pending_error, nullptr));
}

}  // namespace mcr::sched
