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

#ifndef MCR_BENCH_HPP_
#define MCR_BENCH_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcr/config.hpp"
#include "mcr/multilevel.hpp"
#include "mcr/runtime.hpp"

namespace mcr::bench {

enum class CkptMode { kNone, kTransparent, kL1, kL2, kL3, kL4 };

std::string_view to_string(CkptMode m);
// "none", "transparent", "l1".."l4". Throws kInvalidArgument.
CkptMode parse_ckpt_mode(std::string_view text);
std::optional<ml::Level> ml_level(CkptMode m);

// What a benchmark runs on: network, layout and runtime knobs.
struct JobSetup {
  config::NetConfig net;
  config::JobSpec job;
  RuntimeOptions opts;
  // Written into every manifest; lets a restart rebuild the job.
  std::map<std::string, std::string> manifest_extra;
};

// ---------------------------------------------------------------------------
// Heat distribution: 2-D Jacobi stencil on a 1-D row decomposition.

struct HeatdisConfig {
  int rows = 64;
  int cols = 64;
  std::uint64_t iterations = 100;
  std::uint64_t ckpt_every = 0;  // 0: never
  CkptMode mode = CkptMode::kNone;
  ml::Options ml;
  // Extra compute units per rank and step, drawn from the job seed. Moves
  // tasks around in virtual time without touching the numerics.
  std::uint64_t jitter = 0;

  // Throws kInvalidArgument.
  void validate(int n_ranks) const;
};

struct HeatdisResult {
  Runtime::RunStatus status = Runtime::RunStatus::kCompleted;
  double residual = 0;
  std::string digest;  // SHA-256 hex of the little-endian grid
  std::vector<double> grid;
  Ticks walltime = 0;
  Ticks ckpt_ticks = 0;
  JobCounters counters;
  std::uint64_t resumed_step = 0;
  std::vector<CkptEvent> events;
  std::optional<std::filesystem::path> manifest;
  std::map<int, ml::Level> recovered_from;
};

struct HeatdisRun {
  JobSetup setup;
  HeatdisConfig cfg;
  std::optional<FaultPlan> fault;
  // Transparent restart from this manifest.
  std::optional<std::filesystem::path> restore;
  // Application-level recovery before the first step.
  std::optional<ml::Level> recover;
};

HeatdisResult run_heatdis(const HeatdisRun& run);

// One Jacobi sweep over a full grid (boundary rows and columns fixed).
// Returns the largest absolute change. Reference for the distributed code.
double jacobi_step(std::vector<double>& grid, int rows, int cols);
std::vector<double> heatdis_initial(int rows, int cols);
std::string grid_digest(const std::vector<double>& grid);

// ---------------------------------------------------------------------------
// Point-to-point latency across checkpoints. Ranks r and r + R/2 ping-pong.

struct CommConfig {
  std::vector<std::uint64_t> sizes = {64, 1024, 65536};
  bool with_checkpoint = true;
  // Kill every process right after the checkpoint; a restore run finishes
  // the measurement.
  bool stop_after_checkpoint = false;
};

struct CommRow {
  std::uint64_t size = 0;
  Ticks pre = 0;
  Ticks transient = 0;
  Ticks post = 0;
};

struct CommResult {
  Runtime::RunStatus status = Runtime::RunStatus::kCompleted;
  std::vector<CommRow> rows;
  std::uint64_t reconnects = 0;
  std::uint64_t census = 0;
  Ticks walltime = 0;
  Ticks ckpt_ticks = 0;
  JobCounters counters;
  std::vector<CkptEvent> events;
  std::optional<std::filesystem::path> manifest;
};

struct CommRun {
  JobSetup setup;
  CommConfig cfg;
  std::optional<std::filesystem::path> restore;
};

// Throws kInvalidArgument for an odd rank count or fewer than 2 processes.
CommResult run_comm_bench(const CommRun& run);

// ---------------------------------------------------------------------------
// Overhead breakdown

struct RunRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::string config;  // anything identifying the job shape
  Ticks total = 0;
  Ticks ckpt = 0;
  std::uint64_t reconnects = 0;
};

struct Breakdown {
  std::string label;
  Ticks total = 0;
  Ticks reference = 0;
  Ticks checkpoint = 0;
  Ticks other = 0;
  double pct_reference = 0;
  double pct_checkpoint = 0;
  double pct_other = 0;
};

// Throws kMismatchedRuns when seeds or configs differ.
Breakdown overhead_breakdown(const RunRecord& reference, const RunRecord& measured);
std::string breakdown_csv(const std::vector<Breakdown>& rows);
// Time checkpoints add to the job: per checkpoint, from the last rank's entry
// to the last rank's return. Earlier arrivals would have waited anyway.
Ticks checkpoint_extent(const std::vector<std::vector<std::pair<Ticks, Ticks>>>& per_rank);
// Same idea from the coordinator's side: last entry to release. Preferred for
// transparent checkpoints, where a rank's own return can trail the release
// by whatever its lane-mates run first.
Ticks checkpoint_extent(const std::vector<CkptSpan>& spans);

// ---------------------------------------------------------------------------
// Experiments driven by the command-line tool.

struct RunSpec {
  std::string net_option = "multirail_tcp";
  std::string net_file;  // empty: built-in configuration
  int np = 4;
  int tasks_per_proc = 1;
  std::string bench = "heatdis";
  CkptMode mode = CkptMode::kNone;
  std::uint64_t ckpt_every = 0;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  int rows = 64;
  int cols = 64;
  std::uint64_t iterations = 100;
  std::uint64_t jitter = 8;
  // Multilevel group shape; 0 / -1 pick a shape that fits np.
  int group_k = 0;
  int group_m = -1;

  ml::GroupConfig group() const;

  std::map<std::string, std::string> to_map() const;
  // Throws kFormatError.
  static RunSpec from_map(const std::map<std::string, std::string>& kv);
  // key=value lines, as stored in <out>/run.conf.
  std::string to_text() const;
  static RunSpec from_text(std::string_view text);
};

JobSetup make_setup(const RunSpec& spec);

struct ExperimentOutcome {
  Runtime::RunStatus status = Runtime::RunStatus::kCompleted;
  std::string digest;
  std::vector<std::filesystem::path> reports;
  std::optional<std::filesystem::path> manifest;
};

// Runs the benchmark named by the spec and writes CSV reports into spec.out.
ExperimentOutcome run_experiment(const RunSpec& spec, std::optional<FaultPlan> fault = std::nullopt);
// Continues a job from a transparent checkpoint manifest.
ExperimentOutcome restart_experiment(const std::filesystem::path& manifest);
// Re-runs the heatdis job recorded in <out>/run.conf, recovering first.
ExperimentOutcome recover_experiment(const std::filesystem::path& out, ml::Level level);

// App finish time of a single task: 500 units of work, a checkpoint at `level`
// of a 130-byte region, a 200-tick wait, 500 more units. No checkpoint when
// `level` is empty.
Ticks oversubscription_scenario(std::optional<ml::Level> level, ml::HelperMode mode, bool io_yield);

}  // namespace mcr::bench

#endif  // MCR_BENCH_HPP_
