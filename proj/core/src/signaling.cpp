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

#include "mcr/signaling.hpp"

#include <fmt/format.h>

namespace mcr::signal {

Bytes encode_control(const ControlMessage& msg) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(msg.kind));
  w.u64(static_cast<std::uint64_t>(msg.origin));
  w.u64(static_cast<std::uint64_t>(msg.target));
  w.u32(msg.hops);
  w.u32(msg.ttl);
  w.u32(static_cast<std::uint32_t>(msg.payload.size()));
  w.raw(msg.payload);
  return std::move(w).take();
}

ControlMessage decode_control(ByteSpan bytes) {
  ByteReader r(bytes);
  ControlMessage m;
  std::uint8_t kind = r.u8();
  if (kind > 3) throw Error(ErrorCode::kFormatError, fmt::format("control kind {}", kind));
  m.kind = static_cast<ControlKind>(kind);
  m.origin = static_cast<ProcessId>(r.u64());
  m.target = static_cast<ProcessId>(r.u64());
  m.hops = r.u32();
  m.ttl = r.u32();
  std::uint32_t len = r.u32();
  ByteSpan body = r.raw(len);
  m.payload.assign(body.begin(), body.end());
  if (!r.done()) throw Error(ErrorCode::kFormatError, "trailing bytes after control payload");
  return m;
}

std::uint64_t distance(ProcessId a, ProcessId b) {
  return a > b ? static_cast<std::uint64_t>(a - b) : static_cast<std::uint64_t>(b - a);
}

ProcessId route_next_hop(ProcessId current, ProcessId target, const RouteView& view) {
  if (current == target) throw Error(ErrorCode::kInvalidArgument, "already at the target");
  if (view.neighbors.empty()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("process {} has no neighbors", current));
  }
  // std::set iterates in ascending order, so the first minimum is the
  // smaller rank.
  ProcessId best = *view.neighbors.begin();
  for (ProcessId n : view.neighbors) {
    if (distance(n, target) < distance(best, target)) best = n;
  }
  if (distance(best, target) >= distance(current, target)) {
    throw Error(ErrorCode::kNoProgress,
                fmt::format("no neighbor of {} is closer to {}", current, target));
  }
  return best;
}

RouteView ring_view(ProcessId p, int n) {
  RouteView v;
  if (n <= 1) return v;
  v.neighbors.insert((p + n - 1) % n);
  v.neighbors.insert((p + 1) % n);
  v.neighbors.erase(p);
  return v;
}

}  // namespace mcr::signal
