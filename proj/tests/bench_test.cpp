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

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "mcr/bench.hpp"
#include "mcr/ckpt.hpp"
#include "test_util.hpp"

namespace mcr::bench {
namespace {

namespace fs = std::filesystem;
using mcr::testing::error_of;
using mcr::testing::TempDir;

RunSpec spec_in(const TempDir& d, int np, int tpp) {
  RunSpec s;
  s.np = np;
  s.tasks_per_proc = tpp;
  s.out = d.path();
  return s;
}

HeatdisRun heat(const RunSpec& s, int rows, int cols, std::uint64_t iters) {
  HeatdisRun run;
  run.setup = make_setup(s);
  run.cfg.rows = rows;
  run.cfg.cols = cols;
  run.cfg.iterations = iters;
  run.cfg.jitter = s.jitter;
  return run;
}

TEST(JacobiTest, OneStepByHand) {
  std::vector<double> g = heatdis_initial(4, 4);
  double delta = jacobi_step(g, 4, 4);
  // Only the two interior cells under the hot edge move.
  const std::vector<double> want = {
      100, 100, 100, 100,  //
      0,   25,  25,  0,    //
      0,   0,   0,   0,    //
      0,   0,   0,   0,
  };
  EXPECT_EQ(g, want);
  EXPECT_EQ(delta, 25.0);
  delta = jacobi_step(g, 4, 4);
  // (1,1) = (100 + 0 + 0 + 25) / 4, (2,1) = (25 + 0 + 0 + 0) / 4.
  EXPECT_EQ(g[5], 31.25);
  EXPECT_EQ(g[6], 31.25);
  EXPECT_EQ(g[9], 6.25);
  EXPECT_EQ(g[10], 6.25);
  EXPECT_EQ(delta, 6.25);
}

TEST(HeatdisTest, SingleRankMatchesReference) {
  TempDir d;
  HeatdisRun run = heat(spec_in(d, 1, 1), 4, 4, 1);
  HeatdisResult r = run_heatdis(run);
  ASSERT_EQ(r.status, Runtime::RunStatus::kCompleted);
  std::vector<double> g = heatdis_initial(4, 4);
  jacobi_step(g, 4, 4);
  EXPECT_EQ(r.grid, g);
  EXPECT_EQ(r.digest, grid_digest(g));
  EXPECT_EQ(r.residual, 25.0);
}

TEST(HeatdisTest, DecompositionInvariance) {
  std::vector<double> ref = heatdis_initial(16, 12);
  double delta = 0;
  for (int i = 0; i < 30; ++i) delta = jacobi_step(ref, 16, 12);
  for (auto [np, tpp] : {std::pair{1, 1}, std::pair{4, 1}, std::pair{2, 2}, std::pair{4, 2}, std::pair{8, 2}}) {
    TempDir d;
    HeatdisResult r = run_heatdis(heat(spec_in(d, np, tpp), 16, 12, 30));
    ASSERT_EQ(r.status, Runtime::RunStatus::kCompleted);
    EXPECT_EQ(r.digest, grid_digest(ref)) << np << "x" << tpp;
    EXPECT_EQ(r.residual, delta);
  }
}

TEST(HeatdisTest, ConfigChecks) {
  TempDir d;
  EXPECT_EQ(error_of([&] { run_heatdis(heat(spec_in(d, 1, 1), 4, 4, 0)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([&] { run_heatdis(heat(spec_in(d, 3, 1), 16, 4, 1)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([&] { run_heatdis(heat(spec_in(d, 1, 1), 2, 4, 1)); }), ErrorCode::kInvalidArgument);
}

TEST(HeatdisTest, FaultHaltsTheJob) {
  TempDir d;
  HeatdisRun run = heat(spec_in(d, 4, 1), 16, 8, 20);
  run.fault = FaultPlan{10, {2}};
  EXPECT_EQ(run_heatdis(run).status, Runtime::RunStatus::kHalted);
  run.fault = FaultPlan{20, {2}};
  EXPECT_EQ(error_of([&] { run_heatdis(run); }), ErrorCode::kInvalidStep);
  run.fault = FaultPlan{5, {4}};
  EXPECT_EQ(error_of([&] { run_heatdis(run); }), ErrorCode::kInvalidArgument);
}

TEST(HeatdisTest, SeedMovesTimeNotNumbers) {
  TempDir d;
  RunSpec a = spec_in(d, 4, 1);
  a.jitter = 50;
  RunSpec b = a;
  b.seed = 99;
  HeatdisResult ra = run_heatdis(heat(a, 16, 8, 10));
  HeatdisResult rb = run_heatdis(heat(b, 16, 8, 10));
  EXPECT_EQ(ra.digest, rb.digest);
  EXPECT_NE(ra.walltime, rb.walltime);
  EXPECT_EQ(run_heatdis(heat(a, 16, 8, 10)).walltime, ra.walltime);
}

TEST(HeatdisTest, MultilevelRecoveryFromPartner) {
  TempDir d;
  RunSpec s = spec_in(d, 8, 1);
  HeatdisRun clean = heat(s, 32, 8, 20);
  const std::string want = run_heatdis(clean).digest;

  HeatdisRun ckpt = clean;
  ckpt.cfg.mode = CkptMode::kL2;
  ckpt.cfg.ckpt_every = 10;
  ckpt.cfg.ml.group = ml::GroupConfig{4, 2, 1};
  ckpt.fault = FaultPlan{15, {3}};
  EXPECT_EQ(run_heatdis(ckpt).status, Runtime::RunStatus::kHalted);

  HeatdisRun again = ckpt;
  again.fault.reset();
  again.recover = ml::Level::kL4;
  HeatdisResult r = run_heatdis(again);
  ASSERT_EQ(r.status, Runtime::RunStatus::kCompleted);
  EXPECT_EQ(r.resumed_step, 10u);
  EXPECT_EQ(r.digest, want);
  EXPECT_EQ(r.recovered_from.at(3), ml::Level::kL2);
  EXPECT_EQ(r.recovered_from.at(0), ml::Level::kL1);

  // Level 1 only: rank 3's local copy is gone.
  again.recover = ml::Level::kL1;
  EXPECT_EQ(error_of([&] { run_heatdis(again); }), ErrorCode::kUnrecoverable);
}

TEST(HeatdisTest, MultilevelRecoveryAtOddInterval) {
  // The saved grid must be the one at the checkpoint step, whatever its parity.
  TempDir d;
  HeatdisRun clean = heat(spec_in(d, 8, 1), 32, 8, 20);
  const std::string want = run_heatdis(clean).digest;
  HeatdisRun ckpt = clean;
  ckpt.cfg.mode = CkptMode::kL3;
  ckpt.cfg.ckpt_every = 7;
  ckpt.cfg.ml.group = ml::GroupConfig{4, 2, 1};
  ckpt.fault = FaultPlan{9, {3}};
  EXPECT_EQ(run_heatdis(ckpt).status, Runtime::RunStatus::kHalted);
  ckpt.fault.reset();
  ckpt.recover = ml::Level::kL4;
  HeatdisResult r = run_heatdis(ckpt);
  EXPECT_EQ(r.resumed_step, 7u);
  EXPECT_EQ(r.digest, want);
}

// ---------------------------------------------------------------------------

CommRun comm(const TempDir& d, int np) {
  CommRun run;
  run.setup = make_setup(spec_in(d, np, 1));
  run.setup.job.ckpt_dir = d.path() / "ckpt";
  return run;
}

TEST(CommTest, NoCheckpointMeansNoReconnects) {
  TempDir d;
  CommRun run = comm(d, 4);
  run.cfg.with_checkpoint = false;
  CommResult r = run_comm_bench(run);
  ASSERT_EQ(r.status, Runtime::RunStatus::kCompleted);
  EXPECT_EQ(r.reconnects, 0u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.pre, row.transient);
    EXPECT_EQ(row.pre, row.post);
  }
  EXPECT_GT(r.rows.back().pre, r.rows.front().pre);
}

TEST(CommTest, CheckpointReconnectsEveryDynamicRoute) {
  TempDir d;
  CommResult r = run_comm_bench(comm(d, 4));
  ASSERT_EQ(r.status, Runtime::RunStatus::kCompleted);
  EXPECT_GT(r.census, 0u);
  EXPECT_EQ(r.reconnects, r.census);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.post, row.pre) << row.size;
    EXPECT_GE(row.transient, row.pre) << row.size;
  }
  ASSERT_TRUE(r.manifest.has_value());
  EXPECT_EQ(ckpt::read_manifest(*r.manifest).dynamic_routes, r.census);
}

TEST(CommTest, RestartedRunRebuildsRoutes) {
  TempDir d;
  CommRun first = comm(d, 4);
  first.cfg.stop_after_checkpoint = true;
  CommResult a = run_comm_bench(first);
  ASSERT_EQ(a.status, Runtime::RunStatus::kHalted);
  ASSERT_TRUE(a.manifest.has_value());
  ckpt::Manifest m = ckpt::read_manifest(*a.manifest);

  CommRun second = comm(d, 4);
  second.restore = *a.manifest;
  CommResult b = run_comm_bench(second);
  ASSERT_EQ(b.status, Runtime::RunStatus::kCompleted);
  EXPECT_EQ(b.reconnects, m.dynamic_routes);
  for (const auto& row : b.rows) EXPECT_EQ(row.post, row.pre);
}

TEST(CommTest, ShapeChecks) {
  TempDir d;
  EXPECT_EQ(error_of([&] { run_comm_bench(comm(d, 1)); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([&] { run_comm_bench(comm(d, 3)); }), ErrorCode::kInvalidArgument);
}

// ---------------------------------------------------------------------------

TEST(ReportTest, NoCheckpointPair) {
  RunRecord ref{"none", 1, "heatdis/4x1", 1000, 0, 0};
  RunRecord run{"none", 1, "heatdis/4x1", 1000, 0, 0};
  Breakdown b = overhead_breakdown(ref, run);
  EXPECT_EQ(b.pct_checkpoint, 0.0);
  EXPECT_EQ(b.pct_other, 0.0);
  EXPECT_EQ(b.pct_reference, 100.0);
}

TEST(ReportTest, PercentagesSumToHundred) {
  for (Ticks extra : {0, 7, 333, 9999}) {
    RunRecord ref{"ref", 3, "c", 12345, 0, 0};
    RunRecord run{"t", 3, "c", 12345 + 500 + extra, 500, 2};
    Breakdown b = overhead_breakdown(ref, run);
    EXPECT_EQ(b.other, extra);
    EXPECT_NEAR(b.pct_reference + b.pct_checkpoint + b.pct_other, 100.0, 0.1);
  }
}

TEST(ReportTest, MismatchedRuns) {
  RunRecord a{"a", 1, "c", 10, 0, 0};
  RunRecord b{"b", 2, "c", 10, 0, 0};
  EXPECT_EQ(error_of([&] { overhead_breakdown(a, b); }), ErrorCode::kMismatchedRuns);
  b.seed = 1;
  b.config = "other";
  EXPECT_EQ(error_of([&] { overhead_breakdown(a, b); }), ErrorCode::kMismatchedRuns);
}

TEST(ReportTest, Csv) {
  Breakdown b{"transparent", 200, 150, 40, 10, 75, 20, 5};
  EXPECT_EQ(breakdown_csv({b}),
            "label,total_ticks,reference_ticks,checkpoint_ticks,other_ticks,reference_pct,checkpoint_pct,"
            "other_pct\ntransparent,200,150,40,10,75.000,20.000,5.000\n");
}

TEST(ReportTest, CheckpointExtent) {
  // Two ranks, two checkpoints: only the last arrival and last return count.
  std::vector<std::vector<std::pair<Ticks, Ticks>>> spans = {{{10, 50}, {100, 130}}, {{20, 55}, {90, 140}}};
  EXPECT_EQ(checkpoint_extent(spans), (55 - 20) + (140 - 100));
}

TEST(ReportTest, OtherOverheadTracksReconnects) {
  // Heatdis talks to ring neighbors only: nothing to reconnect, nothing extra.
  {
    TempDir d;
    RunSpec s = spec_in(d, 4, 1);
    s.mode = CkptMode::kTransparent;
    s.ckpt_every = 50;
    run_experiment(s);
    std::string csv = testing::read_text(d.path() / "overhead.csv");
    EXPECT_NE(csv.find("transparent,"), std::string::npos);
    EXPECT_NE(csv.find(",0,"), std::string::npos) << csv;
    std::string heat = testing::read_text(d.path() / "heatdis.csv");
    EXPECT_NE(heat.find(",0\n"), std::string::npos) << heat;  // reconnects column
  }
  // The comm bench rebuilds its on-demand routes after the checkpoint.
  {
    TempDir d;
    RunSpec s = spec_in(d, 4, 1);
    s.bench = "comm";
    s.mode = CkptMode::kTransparent;
    run_experiment(s);
    std::string csv = testing::read_text(d.path() / "overhead.csv");
    auto line = csv.substr(csv.find('\n') + 1);
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    ASSERT_GE(cols.size(), 5u) << csv;
    EXPECT_GT(std::stoll(cols[4]), 0) << csv;
  }
}

TEST(RunSpecTest, TextRoundTrip) {
  RunSpec s;
  s.np = 8;
  s.tasks_per_proc = 2;
  s.bench = "comm";
  s.mode = CkptMode::kL3;
  s.ckpt_every = 25;
  s.seed = 77;
  s.group_k = 4;
  s.group_m = 1;
  RunSpec back = RunSpec::from_text(s.to_text());
  EXPECT_EQ(back.to_map(), s.to_map());
  EXPECT_EQ(error_of([] { RunSpec::from_text("np=lots\n"); }), ErrorCode::kFormatError);
}

TEST(RunSpecTest, AutoGroupShape) {
  RunSpec s;
  s.np = 8;
  EXPECT_EQ(s.group().k, 4);
  EXPECT_EQ(s.group().m, 2);
  s.np = 4;
  EXPECT_EQ(s.group().k, 2);
  EXPECT_EQ(s.group().m, 2);
  s.np = 1;
  EXPECT_EQ(s.group().k, 1);
  EXPECT_EQ(s.group().m, 0);
}

TEST(ModeTest, Names) {
  for (auto m : {CkptMode::kNone, CkptMode::kTransparent, CkptMode::kL1, CkptMode::kL2, CkptMode::kL3,
                 CkptMode::kL4}) {
    EXPECT_EQ(parse_ckpt_mode(to_string(m)), m);
  }
  EXPECT_EQ(ml_level(CkptMode::kL3), ml::Level::kL3);
  EXPECT_FALSE(ml_level(CkptMode::kTransparent).has_value());
  EXPECT_EQ(error_of([] { parse_ckpt_mode("l5"); }), ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace mcr::bench
