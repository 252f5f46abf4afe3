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

#ifndef MCR_SIGNALING_HPP_
#define MCR_SIGNALING_HPP_

#include <cstdint>
#include <set>
#include <vector>

#include "mcr/bytes.hpp"
#include "mcr/multirail.hpp"

namespace mcr::signal {

using rail::ProcessId;

enum class ControlKind : std::uint8_t {
  kConnRequest = 0,
  kConnAck = 1,
  kBarrierToken = 2,
  kProbe = 3,
};

struct ControlMessage {
  ControlKind kind = ControlKind::kProbe;
  ProcessId origin = 0;
  ProcessId target = 0;
  std::uint32_t hops = 0;
  std::uint32_t ttl = 0;
  Bytes payload;

  friend bool operator==(const ControlMessage&, const ControlMessage&) = default;
};

// [u8 kind][u64 origin][u64 target][u32 hops][u32 ttl][u32 len][bytes], LE.
Bytes encode_control(const ControlMessage& msg);
// Throws kFormatError.
ControlMessage decode_control(ByteSpan bytes);

struct RouteView {
  std::set<ProcessId> neighbors;
};

// Plain absolute rank distance; the ring wrap is not folded in.
std::uint64_t distance(ProcessId a, ProcessId b);

// Neighbor minimizing distance to `target`, ties to the smaller rank. Throws
// kNoProgress unless the pick is strictly closer than `current`, and
// kInvalidArgument when current == target or the view is empty.
ProcessId route_next_hop(ProcessId current, ProcessId target, const RouteView& view);

// Full greedy path (excluding `origin`) over a static adjacency: view_of(p)
// gives the neighbor set of p. Throws kNoProgress / kTtlExceeded.
template <typename ViewFn>
std::vector<ProcessId> route_path(ProcessId origin, ProcessId target, std::uint32_t ttl,
                                  ViewFn&& view_of);

// Ring adjacency {p-1, p+1} mod n (deduplicated, self excluded).
RouteView ring_view(ProcessId p, int n);

}  // namespace mcr::signal

#include "mcr/error.hpp"

namespace mcr::signal {

template <typename ViewFn>
std::vector<ProcessId> route_path(ProcessId origin, ProcessId target, std::uint32_t ttl,
                                  ViewFn&& view_of) {
  std::vector<ProcessId> path;
  ProcessId at = origin;
  while (at != target) {
    if (path.size() >= ttl) throw Error(ErrorCode::kTtlExceeded, "control message ttl exhausted");
    at = route_next_hop(at, target, view_of(at));
    path.push_back(at);
  }
  return path;
}

}  // namespace mcr::signal

#endif  // MCR_SIGNALING_HPP_
