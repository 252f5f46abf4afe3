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

#ifndef MCR_CONFIG_HPP_
#define MCR_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcr/cost_model.hpp"

namespace mcr::config {

enum class Driver { kInproc, kTcp, kMockRdma };
enum class Topology { kRing, kNone, kFull };

std::string_view to_string(Driver d);
std::string_view to_string(Topology t);

// Default link latency in ticks when a driver config does not set one.
Ticks default_latency(Driver d);
// inproc endpoints serialize into process images; tcp and mock_rdma rails are
// closed before an image is written.
bool default_checkpointable(Driver d);

struct GateSpec {
  enum class Kind { kMinSize };
  Kind kind = Kind::kMinSize;
  std::uint64_t value = 0;  // bytes

  // Strict: a message passes a minsize gate only when larger than value.
  bool passes(std::uint64_t message_size) const { return message_size > value; }

  friend bool operator==(const GateSpec&, const GateSpec&) = default;
};

struct DriverConfig {
  std::string name;
  Driver driver = Driver::kTcp;
  Ticks latency = 0;

  friend bool operator==(const DriverConfig&, const DriverConfig&) = default;
};

struct RailSpec {
  std::string name;
  int priority = 0;
  Driver driver = Driver::kTcp;  // resolved from config_ref
  Topology topology = Topology::kNone;
  bool checkpointable = false;
  std::vector<GateSpec> gates;
  std::string config_ref;
  Ticks latency = 0;  // resolved from config_ref

  bool gates_pass(std::uint64_t message_size) const;
  // Ring topology with no gates: can carry any control or data message.
  bool accepts_all_ring() const { return topology == Topology::kRing && gates.empty(); }

  friend bool operator==(const RailSpec&, const RailSpec&) = default;
};

struct NetOption {
  std::string name;
  std::vector<std::string> rails;

  friend bool operator==(const NetOption&, const NetOption&) = default;
};

struct NetConfig {
  std::vector<DriverConfig> drivers;
  std::vector<RailSpec> rails;
  std::vector<NetOption> options;

  const DriverConfig* find_driver(std::string_view name) const;
  const RailSpec* find_rail(std::string_view name) const;
  const NetOption* find_option(std::string_view name) const;

  // Rails of an option sorted for election: priority descending, ties kept in
  // the option's listed order. Throws kDanglingReference for unknown names.
  std::vector<RailSpec> rails_for(std::string_view option) const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Parses the sectioned text format:
//
//   config <name> { driver = tcp|inproc|mock_rdma; [latency = <ticks>;] }
//   rail <name> { priority = <int>; topology = ring|none|full; config = <name>;
//                 [checkpointable = true|false;] [gate minsize = <size>;] }
//   option <name> { rails = <name>[, <name>...]; }
//
// Statements end with ';' or a newline; '#' starts a comment. Sizes accept
// B, KB and MB suffixes (powers of 1024).
//
// Errors: kSyntaxError, kDanglingReference, kNoRingRail.
NetConfig parse_config(std::string_view text);

// Canonical text form; parse_config(serialize_config(c)) == c for any c
// returned by parse_config.
std::string serialize_config(const NetConfig& config);

// "32KB" -> 32768. Throws kSyntaxError.
std::uint64_t parse_size(std::string_view text);

// A two-rail TCP configuration: a ring rail for control traffic and a gated
// rail for large messages (option multirail_tcp).
std::string_view builtin_multirail_tcp();

struct JobSpec {
  int n_processes = 1;
  int tasks_per_process = 1;
  int lanes_per_process = 1;
  std::uint64_t seed = 0;
  CostModel cost;
  std::filesystem::path ckpt_dir = "ckpt";
  std::string net_option;

  int n_tasks() const { return n_processes * tasks_per_process; }
  // Throws kInvalidArgument.
  void validate() const;
  // Deterministic text used for the restart compatibility hash.
  std::string canonical() const;
};

// SHA-256 over the canonical network config and job layout.
std::string config_hash(const NetConfig& net, const JobSpec& job);

}  // namespace mcr::config

#endif  // MCR_CONFIG_HPP_
