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

#include <thread>

#include <gtest/gtest.h>

#include "mcr/config.hpp"
#include "mcr/frame.hpp"
#include "mcr/multirail.hpp"
#include "mcr/runtime.hpp"
#include "test_util.hpp"

namespace mcr::rail {
namespace {

using mcr::testing::error_of;
using mcr::testing::TempDir;

std::vector<config::RailSpec> tcp_rails() {
  return config::parse_config(config::builtin_multirail_tcp()).rails_for("multirail_tcp");
}

bool all_open(std::string_view) { return true; }

TEST(EndpointTableTest, PriorityOrderAndCreationTies) {
  EndpointTable t;
  t.insert({"low", 3, EndpointState::kConnected, "", 1});
  t.insert({"high", 3, EndpointState::kConnected, "", 10});
  t.insert({"mid_a", 3, EndpointState::kConnected, "", 5});
  t.insert({"mid_b", 3, EndpointState::kConnected, "", 5});
  const auto& l = t.list(3);
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0].rail, "high");
  EXPECT_EQ(l[1].rail, "mid_a");
  EXPECT_EQ(l[2].rail, "mid_b");
  EXPECT_EQ(l[3].rail, "low");
  EXPECT_LT(l[1].creation, l[2].creation);
}

TEST(EndpointTableTest, NoDuplicatesAndRemoval) {
  EndpointTable t;
  t.insert({"r", 1, EndpointState::kConnected, "", 1});
  EXPECT_EQ(error_of([&] { t.insert({"r", 1, EndpointState::kPending, "", 1}); }),
            ErrorCode::kInvalidArgument);
  t.insert({"r", 2, EndpointState::kPending, "", 1});
  t.insert({"s", 2, EndpointState::kConnected, "", 2});
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(t.count("r"), 2u);
  EXPECT_EQ(t.connected_remotes(), (std::set<ProcessId>{1, 2}));
  EXPECT_EQ(t.remove_rail("r"), 2u);
  EXPECT_FALSE(t.remove("r", 1));
  EXPECT_TRUE(t.remove("s", 2));
  EXPECT_EQ(t.size(), 0u);
}

TEST(ElectionTest, LargeMessageCreatesOnGatedRail) {
  EndpointTable t;
  auto rails = tcp_rails();
  Election e = elect_endpoint(t, 5, 64 * 1024, rails, all_open);
  ASSERT_EQ(e.kind, Election::Kind::kCreate);
  EXPECT_EQ(e.rail->name, "tcp_large");
}

TEST(ElectionTest, SmallMessageFallsThroughToRing) {
  EndpointTable t;
  auto rails = tcp_rails();
  Election e = elect_endpoint(t, 5, 1024, rails, all_open);
  ASSERT_EQ(e.kind, Election::Kind::kCreate);
  EXPECT_EQ(e.rail->name, "tcp_mpi");
}

TEST(ElectionTest, ExistingEndpointWinsWhenGatesPass) {
  EndpointTable t;
  auto rails = tcp_rails();
  t.insert({"tcp_mpi", 5, EndpointState::kConnected, "", 1});
  Election small = elect_endpoint(t, 5, 64, rails, all_open);
  ASSERT_EQ(small.kind, Election::Kind::kExisting);
  EXPECT_EQ(small.endpoint->rail, "tcp_mpi");
  // The ring endpoint also carries large messages: first passing endpoint.
  Election large = elect_endpoint(t, 5, 64 * 1024, rails, all_open);
  ASSERT_EQ(large.kind, Election::Kind::kExisting);
  EXPECT_EQ(large.endpoint->rail, "tcp_mpi");
  // Pending endpoints are never elected.
  EndpointTable p;
  p.insert({"tcp_large", 5, EndpointState::kPending, "", 10});
  EXPECT_EQ(elect_endpoint(p, 5, 64 * 1024, rails, all_open).kind, Election::Kind::kCreate);
}

TEST(ElectionTest, NoRouteWhenEveryGateFails) {
  config::NetConfig cfg = config::parse_config(
      "config c { driver = tcp }\n"
      "rail ring { topology = ring\n config = c }\n"
      "rail big { priority = 3\n topology = none\n config = c\n gate minsize = 4KB }\n"
      "rail bigger { priority = 4\n topology = full\n config = c\n gate minsize = 8KB }\n"
      "option o { rails = ring, big, bigger }\n");
  std::vector<config::RailSpec> gated;
  for (const auto& r : cfg.rails_for("o"))
    if (r.topology != config::Topology::kRing) gated.push_back(r);
  EndpointTable t;
  EXPECT_EQ(error_of([&] { elect_endpoint(t, 2, 100, gated, all_open); }), ErrorCode::kNoRouteToProcess);
  // Closed rails are skipped as well.
  auto rails = tcp_rails();
  EXPECT_EQ(error_of([&] { elect_endpoint(t, 2, 100, rails, [](std::string_view) { return false; }); }),
            ErrorCode::kNoRouteToProcess);
}

TEST(ElectionTest, IntraProcessMessagesBypassElection) {
  EndpointTable t;
  auto rails = tcp_rails();
  Message m;
  m.src_process = 2;
  m.dst_process = 2;
  EXPECT_EQ(error_of([&] { elect_endpoint(t, m, rails, all_open); }), ErrorCode::kInvalidArgument);
}

TEST(FrameTest, EncodeDecodeRoundTrip) {
  Frame f{FrameType::kControl, 1, 7, 3, 14, -42, {1, 2, 3, 4, 5}};
  Bytes wire = encode_frame(f);
  EXPECT_EQ(wire.size(), kFrameHeaderBytes + 5);
  EXPECT_EQ(kFrameHeaderBytes, 45u);
  // Little-endian length prefix counts everything after itself.
  EXPECT_EQ(wire[0], 46);
  EXPECT_EQ(wire[1], 0);
  EXPECT_EQ(wire[4], 1);  // type
  EXPECT_EQ(decode_frame(wire), f);
}

TEST(FrameTest, RejectsBadLengthAndType) {
  Frame f;
  f.payload = Bytes(10, 9);
  Bytes wire = encode_frame(f);
  Bytes cut(wire.begin(), wire.end() - 1);
  EXPECT_EQ(error_of([&] { decode_frame(cut); }), ErrorCode::kFormatError);
  wire[4] = 9;
  EXPECT_EQ(error_of([&] { decode_frame(wire); }), ErrorCode::kFormatError);
}

TEST(FrameSocketTest, LocalhostPingPong) {
  FrameListener listener;
  Frame ping{FrameType::kData, 0, 1, 0, 1, 8, Bytes{'p', 'i', 'n', 'g', 0, 1, 2, 3}};
  std::thread peer([&] {
    FrameSocket s = listener.accept();
    Frame got = s.recv();
    std::swap(got.src_process, got.dst_process);
    s.send(got);
  });
  FrameSocket c = FrameSocket::connect("127.0.0.1", listener.port());
  c.send(ping);
  Frame back = c.recv();
  peer.join();
  EXPECT_EQ(back.payload, ping.payload);
  EXPECT_EQ(back.src_process, 1u);
  EXPECT_EQ(back.dst_process, 0u);
}

TEST(FrameSocketTest, PreservesOrder) {
  FrameListener listener;
  std::thread peer([&] {
    FrameSocket s = listener.accept();
    for (int i = 0; i < 100; ++i) {
      Frame f;
      f.tag = i;
      f.payload = Bytes(static_cast<std::size_t>(i * 37), static_cast<std::uint8_t>(i));
      s.send(f);
    }
  });
  FrameSocket c = FrameSocket::connect("127.0.0.1", listener.port());
  for (int i = 0; i < 100; ++i) {
    Frame f = c.recv();
    ASSERT_EQ(f.tag, i);
    ASSERT_EQ(f.payload.size(), static_cast<std::size_t>(i * 37));
  }
  peer.join();
}

TEST(RailSetTest, MockRdmaResourcesFollowTheRail) {
  auto cfg = config::parse_config(
      "config ib { driver = mock_rdma }\nconfig c { driver = inproc }\n"
      "rail ring { topology = ring\n config = c }\n"
      "rail ib { priority = 9\n topology = none\n config = ib }\n"
      "option o { rails = ib, ring }\n");
  RailSet rs(0, cfg.rails_for("o"));
  EXPECT_EQ(rs.rdma().pinned_regions.size(), 1u);
  rs.add_endpoint("ib", 3, EndpointState::kConnected, RouteKind::kDynamic, "x");
  rs.add_endpoint("ring", 1, EndpointState::kConnected, RouteKind::kStatic, "y");
  EXPECT_EQ(rs.rdma().qp_tokens.size(), 1u);
  EXPECT_EQ(rs.close("ib"), 1u);
  EXPECT_TRUE(rs.rdma().empty());
  EXPECT_EQ(rs.table().count("ring"), 1u);
  EXPECT_EQ(error_of([&] { rs.add_endpoint("ib", 3, EndpointState::kConnected, RouteKind::kDynamic, ""); }),
            ErrorCode::kRailClosed);
  rs.reopen("ib");
  rs.reopen("ib");  // idempotent
  EXPECT_EQ(rs.incarnation("ib"), 2u);
  EXPECT_EQ(rs.rdma().pinned_regions.size(), 1u);
  EXPECT_EQ(error_of([&] { rs.reopen("nope"); }), ErrorCode::kUnknownRail);
  EXPECT_EQ(rs.close("ib"), 0u);  // zero endpoints: no error
}

TEST(RailSetTest, CloseWithFramesInFlightIsBusy) {
  RailSet rs(0, tcp_rails());
  rs.frame_sent("tcp_large");
  EXPECT_EQ(error_of([&] { rs.close("tcp_large"); }), ErrorCode::kRailBusy);
  rs.frame_arrived("tcp_large");
  EXPECT_NO_THROW(rs.close("tcp_large"));
}

// ---------------------------------------------------------------------------
// On-demand connections through a live runtime.

struct Job {
  TempDir dir;
  std::unique_ptr<Runtime> rt;
  explicit Job(int n, const std::string& text = std::string(config::builtin_multirail_tcp()),
               const std::string& option = "multirail_tcp", Ticks timeout = 1'000'000) {
    config::JobSpec job;
    job.n_processes = n;
    job.net_option = option;
    job.ckpt_dir = dir.path();
    RuntimeOptions opts;
    opts.kvs = RuntimeOptions::KvsMode::kInproc;
    opts.connect_timeout = timeout;
    rt = std::make_unique<Runtime>(config::parse_config(text), job, opts);
  }
  std::uint32_t probe(int from, int to) {
    signal::ControlMessage m;
    m.kind = signal::ControlKind::kProbe;
    m.origin = from;
    m.target = to;
    rt->deliver_control(m);
    rt->engine().run();
    return rt->control_deliveries().back().msg.hops;
  }
};

TEST(ConnectTest, OnDemandEndpointOnBothSides) {
  Job j(8);
  std::optional<std::exception_ptr> result;
  j.rt->request_connection(0, 5, "tcp_large", [&](std::exception_ptr e) { result = e; });
  j.rt->engine().run();
  ASSERT_TRUE(result.has_value());
  EXPECT_EQ(*result, nullptr);
  const Endpoint* a = j.rt->rails(0).table().find("tcp_large", 5);
  const Endpoint* b = j.rt->rails(5).table().find("tcp_large", 0);
  ASSERT_NE(a, nullptr);
  ASSERT_NE(b, nullptr);
  EXPECT_EQ(a->state, EndpointState::kConnected);
  EXPECT_EQ(b->state, EndpointState::kConnected);
  EXPECT_EQ(a->kind, RouteKind::kDynamic);
  // Both election lists now put the gated rail first for large messages.
  EXPECT_EQ(j.rt->rails(0).table().list(5).front().rail, "tcp_large");
  EXPECT_EQ(j.rt->counters().connections, 1u);

  // Idempotent: a second request neither duplicates nor reconnects.
  bool again = false;
  j.rt->request_connection(0, 5, "tcp_large", [&](std::exception_ptr e) { again = e == nullptr; });
  j.rt->engine().run();
  EXPECT_TRUE(again);
  EXPECT_EQ(j.rt->rails(0).table().count("tcp_large"), 1u);
  EXPECT_EQ(j.rt->counters().connections, 1u);
}

TEST(ConnectTest, ShortcutShortensControlRoutes) {
  Job j(8);
  std::uint32_t before = j.probe(0, 4);
  EXPECT_EQ(before, 4u);
  bool ok = false;
  j.rt->request_connection(0, 4, "tcp_mpi", [&](std::exception_ptr e) { ok = e == nullptr; });
  j.rt->engine().run();
  ASSERT_TRUE(ok);
  EXPECT_EQ(j.probe(0, 4), 1u);
}

TEST(ConnectTest, GatedShortcutDoesNotCarrySmallControlFrames) {
  Job j(8);
  bool ok = false;
  j.rt->request_connection(0, 4, "tcp_large", [&](std::exception_ptr e) { ok = e == nullptr; });
  j.rt->engine().run();
  ASSERT_TRUE(ok);
  EXPECT_EQ(j.probe(0, 4), 4u);
}

TEST(ConnectTest, RejectsSelfAndDeadPeers) {
  Job j(4);
  EXPECT_EQ(error_of([&] { j.rt->request_connection(2, 2, "tcp_large", [](std::exception_ptr) {}); }),
            ErrorCode::kRailClosed);
  j.rt->kill_process(3);
  EXPECT_EQ(error_of([&] { j.rt->request_connection(0, 3, "tcp_large", [](std::exception_ptr) {}); }),
            ErrorCode::kPeerFailed);
}

TEST(ConnectTest, TargetRailClosedTimesOut) {
  Job j(8, std::string(config::builtin_multirail_tcp()), "multirail_tcp", 5000);
  j.rt->rails(5).close("tcp_large");
  std::optional<ErrorCode> code;
  Ticks t0 = j.rt->now();
  j.rt->request_connection(0, 5, "tcp_large", [&](std::exception_ptr e) {
    try {
      if (e) std::rethrow_exception(e);
    } catch (const Error& err) {
      code = err.code();
    }
  });
  j.rt->engine().run();
  EXPECT_EQ(code, ErrorCode::kConnectTimeout);
  EXPECT_GE(j.rt->now() - t0, 5000);
  EXPECT_EQ(j.rt->rails(0).table().find("tcp_large", 5), nullptr);
}

TEST(CloseRailTest, StaticRingRoutesSurvive) {
  Job j(4, testing::read_text(testing::source_path("configs/mixed.conf")), "mixed");
  bool ok = false;
  j.rt->request_connection(0, 2, "ib_large", [&](std::exception_ptr e) { ok = e == nullptr; });
  j.rt->engine().run();
  ASSERT_TRUE(ok);
  std::size_t ring_before = j.rt->rails(0).table().count("shm_ring");
  EXPECT_EQ(ring_before, 2u);
  EXPECT_EQ(j.rt->close_rail("ib_large"), 2u);
  for (int p = 0; p < 4; ++p) {
    EXPECT_EQ(j.rt->rails(p).table().count("ib_large"), 0u);
    EXPECT_EQ(j.rt->rails(p).table().count("shm_ring"), 2u);
    EXPECT_TRUE(j.rt->rails(p).rdma().empty());
  }
  EXPECT_EQ(j.rt->close_rail("ib_large"), 0u);
  j.rt->reopen_rail("ib_large");
  EXPECT_EQ(error_of([&] { j.rt->reopen_rail("bogus"); }), ErrorCode::kUnknownRail);
}

TEST(CloseRailTest, InFlightFrameMakesRailBusy) {
  Job j(4);
  j.rt->rails(1).frame_sent("tcp_mpi");
  EXPECT_EQ(error_of([&] { j.rt->close_rail("tcp_mpi"); }), ErrorCode::kRailBusy);
  // Nothing was closed anywhere.
  EXPECT_TRUE(j.rt->rails(0).is_open("tcp_mpi"));
}

}  // namespace
}  // namespace mcr::rail
