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
#include "mcr/error.hpp"
#include "mcr/kvs.hpp"

namespace mcr::config {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

TEST(ConfigTest, BuiltinTwoRailOption) {
  NetConfig cfg = parse_config(builtin_multirail_tcp());
  std::vector<RailSpec> rails = cfg.rails_for("multirail_tcp");
  ASSERT_EQ(rails.size(), 2u);
  EXPECT_EQ(rails[0].name, "tcp_large");
  EXPECT_EQ(rails[0].priority, 10);
  EXPECT_EQ(rails[0].topology, Topology::kNone);
  ASSERT_EQ(rails[0].gates.size(), 1u);
  EXPECT_EQ(rails[0].gates[0].value, 32u * 1024);
  EXPECT_EQ(rails[1].name, "tcp_mpi");
  EXPECT_EQ(rails[1].priority, 1);
  EXPECT_TRUE(rails[1].accepts_all_ring());
  EXPECT_EQ(rails[1].driver, Driver::kTcp);
  EXPECT_FALSE(rails[1].checkpointable);
}

TEST(ConfigTest, MinimalSingleRingRail) {
  NetConfig cfg = parse_config(
      "config c { driver = inproc }\n"
      "rail r { priority = 0\n topology = ring\n config = c }\n"
      "option o { rails = r }\n");
  auto rails = cfg.rails_for("o");
  ASSERT_EQ(rails.size(), 1u);
  EXPECT_TRUE(rails[0].checkpointable);  // inproc default
}

TEST(ConfigTest, GatedOnlyOptionHasNoRing) {
  EXPECT_EQ(code_of([] {
              parse_config(
                  "config c { driver = tcp }\n"
                  "rail big { priority = 10\n topology = none\n config = c\n gate minsize = 32KB }\n"
                  "option o { rails = big }\n");
            }),
            ErrorCode::kNoRingRail);
  // A gated ring does not count either.
  EXPECT_EQ(code_of([] {
              parse_config(
                  "config c { driver = tcp }\n"
                  "rail big { priority = 10\n topology = ring\n config = c\n gate minsize = 1KB }\n"
                  "option o { rails = big }\n");
            }),
            ErrorCode::kNoRingRail);
}

TEST(ConfigTest, DanglingReferences) {
  EXPECT_EQ(code_of([] {
              parse_config("rail r { topology = ring\n config = nope }\noption o { rails = r }\n");
            }),
            ErrorCode::kDanglingReference);
  EXPECT_EQ(code_of([] {
              parse_config(
                  "config c { driver = tcp }\nrail r { topology = ring\n config = c }\n"
                  "option o { rails = r, ghost }\n");
            }),
            ErrorCode::kDanglingReference);
}

TEST(ConfigTest, SyntaxErrors) {
  EXPECT_EQ(code_of([] { parse_config("rail r { topology = ring"); }), ErrorCode::kSyntaxError);
  EXPECT_EQ(code_of([] { parse_config("config c { driver = carrier_pigeon }"); }),
            ErrorCode::kSyntaxError);
  EXPECT_EQ(code_of([] { parse_size("12XB"); }), ErrorCode::kSyntaxError);
}

TEST(ConfigTest, SizesAndGates) {
  EXPECT_EQ(parse_size("512"), 512u);
  EXPECT_EQ(parse_size("32KB"), 32768u);
  EXPECT_EQ(parse_size("2mb"), 2u * 1024 * 1024);
  GateSpec g{GateSpec::Kind::kMinSize, 32768};
  EXPECT_TRUE(g.passes(65536));
  EXPECT_FALSE(g.passes(1024));
  EXPECT_FALSE(g.passes(32768));  // strictly larger
}

TEST(ConfigTest, SerializeRoundTrip) {
  NetConfig cfg = parse_config(builtin_multirail_tcp());
  EXPECT_EQ(parse_config(serialize_config(cfg)), cfg);
}

TEST(ConfigTest, ValidationAcceptsIffRingRailPresent) {
  // Enumerate every subset of four rails; exactly those containing the
  // gate-free ring must parse.
  const char* rails[] = {
      "rail a { topology = ring\n config = c }\n",
      "rail b { topology = ring\n config = c\n gate minsize = 1KB }\n",
      "rail d { topology = none\n config = c }\n",
      "rail e { topology = full\n config = c }\n",
  };
  const char* names[] = {"a", "b", "d", "e"};
  for (int mask = 1; mask < 16; ++mask) {
    std::string text = "config c { driver = tcp }\n";
    std::string list;
    for (int i = 0; i < 4; ++i) {
      text += rails[i];
      if (mask & (1 << i)) list += std::string(list.empty() ? "" : ", ") + names[i];
    }
    text += "option o { rails = " + list + " }\n";
    bool expect_ok = (mask & 1) != 0;
    if (expect_ok) {
      EXPECT_NO_THROW(parse_config(text)) << list;
    } else {
      EXPECT_EQ(code_of([&] { parse_config(text); }), ErrorCode::kNoRingRail) << list;
    }
  }
}

TEST(ConfigTest, ConfigHashTracksJobShape) {
  NetConfig cfg = parse_config(builtin_multirail_tcp());
  JobSpec a;
  a.n_processes = 4;
  JobSpec b = a;
  EXPECT_EQ(config_hash(cfg, a), config_hash(cfg, b));
  b.n_processes = 5;
  EXPECT_NE(config_hash(cfg, a), config_hash(cfg, b));
  EXPECT_EQ(config_hash(cfg, a).size(), 64u);
}

TEST(ConfigTest, JobSpecValidation) {
  JobSpec j;
  j.n_processes = 0;
  EXPECT_EQ(code_of([&] { j.validate(); }), ErrorCode::kInvalidArgument);
  j.n_processes = 1;
  j.cost.ctx_switch = -1;
  EXPECT_EQ(code_of([&] { j.validate(); }), ErrorCode::kInvalidArgument);
}

TEST(KvsTest, WriteFenceRead) {
  InprocKvs kvs;
  kvs.put("rail.tcp_mpi.rank.3", "localhost:4513");
  EXPECT_EQ(kvs.fence(), 1u);
  EXPECT_EQ(kvs.get("rail.tcp_mpi.rank.3"), "localhost:4513");
  EXPECT_EQ(kvs.fence(), 2u);
}

TEST(KvsTest, MissingKey) {
  InprocKvs kvs;
  EXPECT_EQ(code_of([&] { kvs.get("missing"); }), ErrorCode::kKeyNotFound);
}

TEST(KvsTest, UnfencedPutIsInvisible) {
  InprocKvs kvs;
  kvs.put("k", "v");
  EXPECT_EQ(code_of([&] { kvs.get("k"); }), ErrorCode::kKeyNotFound);
  kvs.fence();
  EXPECT_EQ(kvs.get("k"), "v");
}

TEST(KvsTest, TcpServerTwoParticipants) {
  KvsServer server(2);
  std::uint64_t e0 = 0;
  std::uint64_t e1 = 0;
  std::string seen0;
  std::string seen1;
  std::thread t([&] {
    TcpKvs kvs("127.0.0.1", server.port());
    kvs.put("b", "from-1");
    e1 = kvs.fence();
    seen1 = kvs.get("a");
  });
  TcpKvs kvs("127.0.0.1", server.port());
  kvs.put("a", "from-0");
  e0 = kvs.fence();
  seen0 = kvs.get("b");
  t.join();
  EXPECT_EQ(e0, 1u);
  EXPECT_EQ(e1, 1u);
  EXPECT_EQ(seen0, "from-1");
  EXPECT_EQ(seen1, "from-0");
  EXPECT_EQ(code_of([&] { kvs.get("zzz"); }), ErrorCode::kKeyNotFound);
}

}  // namespace
}  // namespace mcr::config
