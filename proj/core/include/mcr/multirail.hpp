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

#ifndef MCR_MULTIRAIL_HPP_
#define MCR_MULTIRAIL_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcr/bytes.hpp"
#include "mcr/config.hpp"

namespace mcr::rail {

using ProcessId = int;
using RankId = int;

struct Message {
  RankId src_task = 0;
  RankId dst_task = 0;
  ProcessId src_process = 0;
  ProcessId dst_process = 0;
  std::int64_t tag = 0;
  Bytes payload;
  std::string rail;  // carrier rail; empty for intra-process delivery

  std::uint64_t size() const { return payload.size(); }
};

enum class EndpointState { kConnected, kPending, kClosed };
// Static routes come from the bootstrap topology, dynamic ones from on-demand
// connection.
enum class RouteKind : std::uint8_t { kStatic = 0, kDynamic = 1 };

struct Endpoint {
  std::string rail;
  ProcessId remote = 0;
  EndpointState state = EndpointState::kPending;
  std::string conn_info;
  int priority = 0;
  std::uint64_t creation = 0;  // assigned by EndpointTable::insert
  RouteKind kind = RouteKind::kDynamic;
};

// Per-remote endpoint lists ordered by (rail priority desc, creation asc).
class EndpointTable {
 public:
  // Throws kInvalidArgument on a duplicate (rail, remote) pair.
  Endpoint& insert(Endpoint ep);
  Endpoint* find(std::string_view rail, ProcessId remote);
  const Endpoint* find(std::string_view rail, ProcessId remote) const;
  bool remove(std::string_view rail, ProcessId remote);
  // Removes every endpoint of `rail`; returns how many were removed.
  std::size_t remove_rail(std::string_view rail);

  const std::vector<Endpoint>& list(ProcessId remote) const;
  // Remotes reachable through at least one connected endpoint.
  std::set<ProcessId> connected_remotes() const;
  std::size_t size() const;
  std::size_t count(std::string_view rail) const;
  std::vector<Endpoint> all() const;

 private:
  std::map<ProcessId, std::vector<Endpoint>> lists_;
  std::uint64_t next_creation_ = 1;
};

struct Election {
  enum class Kind { kExisting, kCreate };
  Kind kind = Kind::kExisting;
  const Endpoint* endpoint = nullptr;        // kExisting
  const config::RailSpec* rail = nullptr;    // kCreate
};

using RailOpenFn = std::function<bool(std::string_view rail)>;

// Picks the first connected endpoint to `remote` whose rail gates all pass
// for a payload of `size` bytes. Failing that, walks `rails` (priority
// order) for the first open rail whose gates pass, to connect on demand.
// Throws kNoRouteToProcess.
Election elect_endpoint(const EndpointTable& table, ProcessId remote, std::uint64_t size,
                        std::span<const config::RailSpec> rails, const RailOpenFn& rail_open);

// Message form; requires msg.dst_process != msg.src_process.
Election elect_endpoint(const EndpointTable& table, const Message& msg,
                        std::span<const config::RailSpec> rails, const RailOpenFn& rail_open);

// Pinned memory and queue-pair tokens of the mock RDMA driver. Never
// serialized; emptied when the rail closes.
struct MockRdmaState {
  std::set<std::string> pinned_regions;
  std::map<ProcessId, std::uint64_t> qp_tokens;

  bool empty() const { return pinned_regions.empty() && qp_tokens.empty(); }
};

// Rail state of one logical process: which rails are open, the endpoint
// table and the in-flight frame counters used to refuse closing a busy rail.
class RailSet {
 public:
  RailSet(ProcessId self, std::vector<config::RailSpec> rails_by_priority);

  ProcessId self() const { return self_; }
  EndpointTable& table() { return table_; }
  const EndpointTable& table() const { return table_; }
  const std::vector<config::RailSpec>& rails() const { return rails_; }

  // Throws kUnknownRail.
  const config::RailSpec& spec(std::string_view rail) const;
  const config::RailSpec* find(std::string_view rail) const;
  bool is_open(std::string_view rail) const;

  // Driver-level handle advertised to peers for the current incarnation.
  std::string conn_info(std::string_view rail) const;
  std::uint64_t incarnation(std::string_view rail) const;

  // Adds an endpoint (and a queue-pair token on mock_rdma rails).
  Endpoint& add_endpoint(std::string_view rail, ProcessId remote, EndpointState state,
                         RouteKind kind, std::string conn_info);

  // Removes all endpoints of the rail and releases driver resources.
  // Throws kRailBusy while frames sent on the rail are still in flight.
  std::size_t close(std::string_view rail);
  // Allocates a fresh incarnation; no endpoints are created. Idempotent on
  // an open rail. Throws kUnknownRail.
  void reopen(std::string_view rail);

  void frame_sent(std::string_view rail);
  void frame_arrived(std::string_view rail);
  std::uint64_t in_flight(std::string_view rail) const;

  const MockRdmaState& rdma() const { return rdma_; }

 private:
  struct State {
    bool open = true;
    std::uint64_t incarnation = 1;
    std::uint64_t in_flight = 0;
  };
  State& state(std::string_view rail);
  const State& state(std::string_view rail) const;
  void pin(const config::RailSpec& r);

  ProcessId self_;
  std::vector<config::RailSpec> rails_;
  std::map<std::string, State, std::less<>> states_;
  EndpointTable table_;
  MockRdmaState rdma_;
  std::uint64_t next_qp_ = 1;
};

}  // namespace mcr::rail

#endif  // MCR_MULTIRAIL_HPP_
