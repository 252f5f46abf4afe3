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

#include "mcr/multirail.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mcr/error.hpp"

namespace mcr::rail {

Endpoint& EndpointTable::insert(Endpoint ep) {
  if (find(ep.rail, ep.remote) != nullptr) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("duplicate endpoint ({}, {})", ep.rail, ep.remote));
  }
  ep.creation = next_creation_++;
  auto& list = lists_[ep.remote];
  // Strictly lower priority, or equal priority created earlier, stays ahead.
  auto pos = std::find_if(list.begin(), list.end(),
                          [&](const Endpoint& e) { return e.priority < ep.priority; });
  return *list.insert(pos, std::move(ep));
}

Endpoint* EndpointTable::find(std::string_view rail, ProcessId remote) {
  auto it = lists_.find(remote);
  if (it == lists_.end()) return nullptr;
  for (auto& e : it->second)
    if (e.rail == rail) return &e;
  return nullptr;
}

const Endpoint* EndpointTable::find(std::string_view rail, ProcessId remote) const {
  return const_cast<EndpointTable*>(this)->find(rail, remote);
}

bool EndpointTable::remove(std::string_view rail, ProcessId remote) {
  auto it = lists_.find(remote);
  if (it == lists_.end()) return false;
  auto& list = it->second;
  auto pos = std::find_if(list.begin(), list.end(), [&](const Endpoint& e) { return e.rail == rail; });
  if (pos == list.end()) return false;
  list.erase(pos);
  if (list.empty()) lists_.erase(it);
  return true;
}

std::size_t EndpointTable::remove_rail(std::string_view rail) {
  std::size_t removed = 0;
  for (auto it = lists_.begin(); it != lists_.end();) {
    auto& list = it->second;
    auto before = list.size();
    std::erase_if(list, [&](const Endpoint& e) { return e.rail == rail; });
    removed += before - list.size();
    it = list.empty() ? lists_.erase(it) : std::next(it);
  }
  return removed;
}

const std::vector<Endpoint>& EndpointTable::list(ProcessId remote) const {
  static const std::vector<Endpoint> kEmpty;
  auto it = lists_.find(remote);
  return it == lists_.end() ? kEmpty : it->second;
}

std::set<ProcessId> EndpointTable::connected_remotes() const {
  std::set<ProcessId> out;
  for (const auto& [remote, list] : lists_) {
    for (const auto& e : list) {
      if (e.state == EndpointState::kConnected) {
        out.insert(remote);
        break;
      }
    }
  }
  return out;
}

std::size_t EndpointTable::size() const {
  std::size_t n = 0;
  for (const auto& [remote, list] : lists_) n += list.size();
  return n;
}

std::size_t EndpointTable::count(std::string_view rail) const {
  std::size_t n = 0;
  for (const auto& [remote, list] : lists_)
    n += static_cast<std::size_t>(
        std::count_if(list.begin(), list.end(), [&](const Endpoint& e) { return e.rail == rail; }));
  return n;
}

std::vector<Endpoint> EndpointTable::all() const {
  std::vector<Endpoint> out;
  for (const auto& [remote, list] : lists_) out.insert(out.end(), list.begin(), list.end());
  return out;
}

namespace {

const config::RailSpec* rail_by_name(std::span<const config::RailSpec> rails,
                                     std::string_view name) {
  for (const auto& r : rails)
    if (r.name == name) return &r;
  return nullptr;
}

}  // namespace

Election elect_endpoint(const EndpointTable& table, ProcessId remote, std::uint64_t size,
                        std::span<const config::RailSpec> rails, const RailOpenFn& rail_open) {
  for (const auto& ep : table.list(remote)) {
    if (ep.state != EndpointState::kConnected) continue;
    const config::RailSpec* spec = rail_by_name(rails, ep.rail);
    if (spec != nullptr && spec->gates_pass(size)) {
      return Election{Election::Kind::kExisting, &ep, nullptr};
    }
  }
  for (const auto& r : rails) {
    if (rail_open(r.name) && r.gates_pass(size)) {
      return Election{Election::Kind::kCreate, nullptr, &r};
    }
  }
  throw Error(ErrorCode::kNoRouteToProcess,
              fmt::format("no route to process {} for a {}-byte message", remote, size));
}

Election elect_endpoint(const EndpointTable& table, const Message& msg,
                        std::span<const config::RailSpec> rails, const RailOpenFn& rail_open) {
  if (msg.src_process == msg.dst_process) {
    throw Error(ErrorCode::kInvalidArgument, "intra-process messages bypass rail election");
  }
  return elect_endpoint(table, msg.dst_process, msg.size(), rails, rail_open);
}

RailSet::RailSet(ProcessId self, std::vector<config::RailSpec> rails_by_priority)
    : self_(self), rails_(std::move(rails_by_priority)) {
  for (const auto& r : rails_) {
    states_.emplace(r.name, State{});
    pin(r);
  }
}

const config::RailSpec* RailSet::find(std::string_view rail) const {
  for (const auto& r : rails_)
    if (r.name == rail) return &r;
  return nullptr;
}

const config::RailSpec& RailSet::spec(std::string_view rail) const {
  const config::RailSpec* r = find(rail);
  if (r == nullptr) throw Error(ErrorCode::kUnknownRail, fmt::format("rail '{}'", rail));
  return *r;
}

RailSet::State& RailSet::state(std::string_view rail) {
  auto it = states_.find(rail);
  if (it == states_.end()) throw Error(ErrorCode::kUnknownRail, fmt::format("rail '{}'", rail));
  return it->second;
}

const RailSet::State& RailSet::state(std::string_view rail) const {
  return const_cast<RailSet*>(this)->state(rail);
}

bool RailSet::is_open(std::string_view rail) const {
  auto it = states_.find(rail);
  return it != states_.end() && it->second.open;
}

std::uint64_t RailSet::incarnation(std::string_view rail) const { return state(rail).incarnation; }

std::string RailSet::conn_info(std::string_view rail) const {
  const config::RailSpec& r = spec(rail);
  std::uint64_t inc = state(rail).incarnation;
  switch (r.driver) {
    case config::Driver::kInproc:
      return fmt::format("inproc://{}/{}#{}", self_, r.name, inc);
    case config::Driver::kTcp:
      // Stable per (process, incarnation) so runs stay reproducible.
      return fmt::format("127.0.0.1:{}", 20000 + 64 * self_ + static_cast<int>(inc % 64));
    case config::Driver::kMockRdma:
      return fmt::format("rdma://lid{}/qpn{}", self_, inc);
  }
  return {};
}

void RailSet::pin(const config::RailSpec& r) {
  if (r.driver == config::Driver::kMockRdma) {
    rdma_.pinned_regions.insert(fmt::format("{}#{}", r.name, state(r.name).incarnation));
  }
}

Endpoint& RailSet::add_endpoint(std::string_view rail, ProcessId remote, EndpointState st,
                                RouteKind kind, std::string info) {
  const config::RailSpec& r = spec(rail);
  if (!is_open(rail)) throw Error(ErrorCode::kRailClosed, fmt::format("rail '{}'", rail));
  if (remote == self_) throw Error(ErrorCode::kRailClosed, "cannot connect a process to itself");
  Endpoint ep;
  ep.rail = r.name;
  ep.remote = remote;
  ep.state = st;
  ep.conn_info = std::move(info);
  ep.priority = r.priority;
  ep.kind = kind;
  Endpoint& out = table_.insert(std::move(ep));
  if (r.driver == config::Driver::kMockRdma) rdma_.qp_tokens[remote] = next_qp_++;
  return out;
}

std::size_t RailSet::close(std::string_view rail) {
  const config::RailSpec& r = spec(rail);
  State& s = state(rail);
  if (s.in_flight != 0) {
    throw Error(ErrorCode::kRailBusy,
                fmt::format("rail '{}' on process {} has {} frames in flight", rail, self_,
                            s.in_flight));
  }
  std::size_t removed = table_.remove_rail(rail);
  if (r.driver == config::Driver::kMockRdma) {
    rdma_.qp_tokens.clear();
    std::erase_if(rdma_.pinned_regions,
                  [&](const std::string& region) { return region.starts_with(r.name + "#"); });
  }
  s.open = false;
  return removed;
}

void RailSet::reopen(std::string_view rail) {
  const config::RailSpec& r = spec(rail);
  State& s = state(rail);
  if (s.open) return;
  s.open = true;
  ++s.incarnation;
  pin(r);
}

void RailSet::frame_sent(std::string_view rail) { ++state(rail).in_flight; }

void RailSet::frame_arrived(std::string_view rail) {
  State& s = state(rail);
  if (s.in_flight > 0) --s.in_flight;
}

std::uint64_t RailSet::in_flight(std::string_view rail) const { return state(rail).in_flight; }

}  // namespace mcr::rail
