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

// Bootstrap, on-demand connections and control-message routing.

#include <fmt/format.h>

#include "mcr/error.hpp"
#include "mcr/frame.hpp"
#include "mcr/runtime.hpp"

namespace mcr {

namespace {

std::string bootstrap_key(const config::RailSpec& r, const std::string& gen, int p) {
  return fmt::format("rail.{}.{}.rank.{}", r.name, gen, p);
}

Bytes conn_payload(const std::string& rail, const std::string& info) {
  ByteWriter w;
  w.str16(rail);
  w.str16(info);
  return std::move(w).take();
}

}  // namespace

std::vector<int> Runtime::bootstrap_peers(int p, const config::RailSpec& r) const {
  std::vector<int> out;
  if (r.topology == config::Topology::kRing) {
    for (int q : signal::ring_view(p, n_processes()).neighbors) out.push_back(q);
  } else if (r.topology == config::Topology::kFull) {
    for (int q = 0; q < n_processes(); ++q)
      if (q != p) out.push_back(q);
  }
  return out;
}

void Runtime::bootstrap_put(int p, const config::RailSpec& r, const std::string& gen) {
  kvs_->put(bootstrap_key(r, gen, p), rails(p).conn_info(r.name));
}

void Runtime::bootstrap_link(int p, const config::RailSpec& r, const std::string& gen) {
  rail::RailSet& rs = rails(p);
  for (int q : bootstrap_peers(p, r)) {
    if (proc(q).dead || rs.table().find(r.name, q) != nullptr) continue;
    rs.add_endpoint(r.name, q, rail::EndpointState::kConnected, rail::RouteKind::kStatic,
                    kvs_->get(bootstrap_key(r, gen, q)));
  }
}

void Runtime::bootstrap_all(const config::RailSpec& r, const std::string& gen) {
  for (int p = 0; p < n_processes(); ++p)
    if (!proc(p).dead) bootstrap_put(p, r, gen);
  kvs_->fence();
  for (int p = 0; p < n_processes(); ++p)
    if (!proc(p).dead) bootstrap_link(p, r, gen);
}

std::size_t Runtime::close_rail(const std::string& rail) {
  for (auto& P : procs_) {
    if (P.dead) continue;
    P.rails->spec(rail);
    if (P.rails->in_flight(rail) != 0) {
      throw Error(ErrorCode::kRailBusy,
                  fmt::format("rail '{}' has {} frames in flight from process {}", rail,
                              P.rails->in_flight(rail), P.id));
    }
  }
  std::size_t removed = 0;
  for (auto& P : procs_) {
    if (!P.dead) removed += P.rails->close(rail);
  }
  return removed;
}

void Runtime::reopen_rail(const std::string& rail) {
  for (auto& P : procs_) {
    if (!P.dead) P.rails->reopen(rail);
  }
}

signal::RouteView Runtime::route_view(int process, std::uint64_t frame_payload) const {
  signal::RouteView v;
  const rail::RailSet& rs = *proc(process).rails;
  for (const auto& ep : rs.table().all()) {
    if (ep.state != rail::EndpointState::kConnected || !rs.is_open(ep.rail)) continue;
    if (proc(ep.remote).dead) continue;
    if (rs.spec(ep.rail).gates_pass(frame_payload)) v.neighbors.insert(ep.remote);
  }
  return v;
}

std::uint64_t Runtime::route_census() const {
  std::uint64_t n = 0;
  for (const auto& P : procs_) {
    if (P.dead) continue;
    for (const auto& ep : P.rails->table().all()) {
      if (ep.remote <= P.id || ep.state != rail::EndpointState::kConnected) continue;
      const config::RailSpec& spec = P.rails->spec(ep.rail);
      // Topology edges come back through the bootstrap, not on demand.
      if (spec.checkpointable || ep.kind == rail::RouteKind::kStatic) continue;
      ++n;
    }
  }
  return n;
}

void Runtime::request_connection(int origin, int target, const std::string& rail,
                                 ConnectCallback done) {
  if (origin == target) {
    throw Error(ErrorCode::kRailClosed, "a process cannot connect to itself");
  }
  if (is_dead(target)) {
    throw Error(ErrorCode::kPeerFailed, fmt::format("process {} is dead", target));
  }
  rail::RailSet& rs = rails(origin);
  rs.spec(rail);
  if (!rs.is_open(rail)) {
    throw Error(ErrorCode::kRailClosed, fmt::format("rail '{}' is closed on process {}", rail, origin));
  }
  rail::Endpoint* ep = rs.table().find(rail, target);
  if (ep != nullptr && ep->state == rail::EndpointState::kConnected) {
    done(nullptr);
    return;
  }
  auto& pending = proc(origin).pending;
  auto key = std::make_pair(rail, target);
  if (auto it = pending.find(key); it != pending.end()) {
    it->second.callbacks.push_back(std::move(done));
    return;
  }
  if (ep == nullptr) {
    rs.add_endpoint(rail, target, rail::EndpointState::kPending, rail::RouteKind::kDynamic, {});
  }
  std::uint64_t id = next_conn_id_++;
  pending[key] = PendingConn{id, {std::move(done)}};

  signal::ControlMessage req;
  req.kind = signal::ControlKind::kConnRequest;
  req.origin = origin;
  req.target = target;
  req.ttl = static_cast<std::uint32_t>(n_processes());
  req.payload = conn_payload(rail, rs.conn_info(rail));
  route_control(origin, std::move(req));

  engine_.after(opts_.connect_timeout, [this, origin, target, rail, id] {
    if (is_dead(origin)) return;
    auto& pend = proc(origin).pending;
    auto it = pend.find({rail, target});
    if (it == pend.end() || it->second.id != id) return;
    rail::RailSet& rs2 = rails(origin);
    if (rail::Endpoint* e = rs2.table().find(rail, target);
        e != nullptr && e->state == rail::EndpointState::kPending) {
      rs2.table().remove(rail, target);
    }
    finish_pending(origin, rail, target,
                   std::make_exception_ptr(Error(
                       ErrorCode::kConnectTimeout,
                       fmt::format("no answer from process {} on rail '{}'", target, rail))));
  });
}

void Runtime::finish_pending(int p, const std::string& rail, int q, std::exception_ptr error) {
  auto& pend = proc(p).pending;
  auto it = pend.find({rail, q});
  if (it == pend.end()) return;
  auto callbacks = std::move(it->second.callbacks);
  pend.erase(it);
  for (auto& cb : callbacks) cb(error);
}

void Runtime::note_connected(int p, const std::string& rail, int q) {
  const rail::Endpoint* mine = rails(p).table().find(rail, q);
  const rail::Endpoint* theirs = rails(q).table().find(rail, p);
  bool before = (mine != nullptr && mine->state == rail::EndpointState::kConnected) ||
                (theirs != nullptr && theirs->state == rail::EndpointState::kConnected);
  if (!before) {
    ++counters_.connections;
    if (routes_closed_) ++counters_.reconnects;
  }
}

void Runtime::on_conn_request(int at, const signal::ControlMessage& msg) {
  ByteReader r(msg.payload);
  std::string rail = r.str16();
  std::string info = r.str16();
  if (is_dead(at) || is_dead(msg.origin)) return;
  rail::RailSet& rs = rails(at);
  // A closed rail drops the request; the requester times out.
  if (rs.find(rail) == nullptr || !rs.is_open(rail)) return;
  note_connected(at, rail, msg.origin);
  rail::Endpoint* ep = rs.table().find(rail, msg.origin);
  if (ep == nullptr) {
    rs.add_endpoint(rail, msg.origin, rail::EndpointState::kConnected, rail::RouteKind::kDynamic, info);
  } else if (ep->state != rail::EndpointState::kConnected) {
    ep->state = rail::EndpointState::kConnected;
    ep->conn_info = info;
  }
  finish_pending(at, rail, msg.origin, nullptr);

  signal::ControlMessage ack;
  ack.kind = signal::ControlKind::kConnAck;
  ack.origin = at;
  ack.target = msg.origin;
  ack.ttl = static_cast<std::uint32_t>(n_processes());
  ack.payload = conn_payload(rail, rs.conn_info(rail));
  route_control(at, std::move(ack));
}

void Runtime::on_conn_ack(int at, const signal::ControlMessage& msg) {
  ByteReader r(msg.payload);
  std::string rail = r.str16();
  std::string info = r.str16();
  if (is_dead(at)) return;
  rail::RailSet& rs = rails(at);
  if (rs.find(rail) == nullptr || !rs.is_open(rail)) return;
  rail::Endpoint* ep = rs.table().find(rail, msg.origin);
  if (ep == nullptr) {
    // Late answer after a timeout: the peer already holds its side.
    rs.add_endpoint(rail, msg.origin, rail::EndpointState::kConnected, rail::RouteKind::kDynamic, info);
  } else if (ep->state != rail::EndpointState::kConnected) {
    ep->state = rail::EndpointState::kConnected;
    ep->conn_info = info;
  }
  finish_pending(at, rail, msg.origin, nullptr);
}

void Runtime::deliver_control(signal::ControlMessage msg) {
  proc(msg.origin);
  proc(msg.target);
  if (msg.ttl == 0) msg.ttl = static_cast<std::uint32_t>(n_processes());
  route_control(msg.origin, std::move(msg));
}

void Runtime::route_control(int at, signal::ControlMessage msg) {
  if (proc(at).dead) return;
  if (at == msg.target) {
    handle_control(at, msg);
    return;
  }
  if (msg.hops >= msg.ttl) {
    routing_errors_.push_back(
        Error(ErrorCode::kTtlExceeded,
              fmt::format("control {}->{} dropped at {} after {} hops", msg.origin, msg.target, at,
                          msg.hops))
            .what());
    return;
  }
  ++msg.hops;
  rail::Frame f;
  f.type = (msg.kind == signal::ControlKind::kConnRequest || msg.kind == signal::ControlKind::kConnAck)
               ? rail::FrameType::kHandshake
               : rail::FrameType::kControl;
  f.payload = signal::encode_control(msg);
  int next;
  try {
    next = signal::route_next_hop(at, msg.target, route_view(at, f.payload.size()));
  } catch (const Error& e) {
    routing_errors_.push_back(e.what());
    return;
  }
  rail::RailSet& rs = rails(at);
  const rail::Endpoint* ep = nullptr;
  for (const auto& e : rs.table().list(next)) {
    if (e.state == rail::EndpointState::kConnected && rs.spec(e.rail).gates_pass(f.payload.size())) {
      ep = &e;
      break;
    }
  }
  const config::RailSpec& spec = rs.spec(ep->rail);
  f.src_process = static_cast<std::uint64_t>(at);
  f.dst_process = static_cast<std::uint64_t>(next);
  Ticks cost = hop_cost(spec, f.payload.size());
  Bytes wire = rail::encode_frame(f);
  rs.frame_sent(spec.name);
  ++counters_.control_frames;
  engine_.after(cost, [this, at, next, rail_name = spec.name, wire = std::move(wire)] {
    rails(at).frame_arrived(rail_name);
    if (proc(next).dead) return;
    rail::Frame g = rail::decode_frame(wire);
    route_control(next, signal::decode_control(g.payload));
  });
}

void Runtime::handle_control(int at, const signal::ControlMessage& msg) {
  switch (msg.kind) {
    case signal::ControlKind::kConnRequest:
      on_conn_request(at, msg);
      break;
    case signal::ControlKind::kConnAck:
      on_conn_ack(at, msg);
      break;
    case signal::ControlKind::kBarrierToken:
      on_barrier_token(at, msg);
      break;
    case signal::ControlKind::kProbe:
      deliveries_.push_back(ControlDelivery{msg, at, now()});
      break;
  }
}

}  // namespace mcr
