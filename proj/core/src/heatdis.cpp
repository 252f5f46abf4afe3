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

// Heat distribution benchmark.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include <fmt/format.h>

#include "mcr/bench.hpp"
#include "mcr/error.hpp"
#include "mcr/hash.hpp"

namespace mcr::bench {

namespace {

constexpr double kTopTemperature = 100.0;

struct RankState {
  std::uint64_t step = 0;
  std::vector<double> u;  // local rows plus a ghost row above and below
  double residual = 0;
  std::vector<std::pair<Ticks, Ticks>> ckpts;  // entry, return
  bool done = false;
};

struct Shared {
  HeatdisConfig cfg;
  int n_ranks = 0;
  std::uint64_t seed = 0;
  std::vector<RankState> ranks;
  std::unique_ptr<ml::Service> service;
  std::optional<ml::Level> recover;
  std::uint64_t resumed = 0;
};

Bytes save_state(const RankState& s) {
  ByteWriter w;
  w.u64(s.step);
  w.u64(s.u.size());
  for (double v : s.u) w.f64(v);
  return std::move(w).take();
}

void load_state(ByteSpan blob, RankState& s) {
  ByteReader r(blob);
  s.step = r.u64();
  std::uint64_t n = r.u64();
  if (n != s.u.size()) {
    throw Error(ErrorCode::kFormatError, fmt::format("image holds {} cells, rank owns {}", n, s.u.size()));
  }
  for (double& v : s.u) v = r.f64();
}

Bytes row_bytes(const std::vector<double>& u, int row, int cols) {
  Bytes out(static_cast<std::size_t>(cols) * sizeof(double));
  std::memcpy(out.data(), u.data() + static_cast<std::size_t>(row) * cols, out.size());
  return out;
}

void put_row(std::vector<double>& u, int row, int cols, const Bytes& bytes) {
  if (bytes.size() != static_cast<std::size_t>(cols) * sizeof(double)) {
    throw Error(ErrorCode::kFormatError, "ghost row of the wrong width");
  }
  std::memcpy(u.data() + static_cast<std::size_t>(row) * cols, bytes.data(), bytes.size());
}

std::int64_t ghost_tag(std::uint64_t step, int dir) { return static_cast<std::int64_t>(step * 2 + dir); }

sched::Co<> heatdis_rank(TaskContext& ctx, Shared* sh) {
  const HeatdisConfig& cfg = sh->cfg;
  const int R = sh->n_ranks;
  const int r = ctx.rank();
  const int L = cfg.rows / R;
  const int cols = cfg.cols;
  const int g0 = r * L;
  RankState& st = sh->ranks[static_cast<std::size_t>(r)];
  std::mt19937_64 rng(sh->seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(r));

  st.u.assign(static_cast<std::size_t>(L + 2) * cols, 0.0);
  if (g0 == 0) std::fill_n(st.u.begin() + cols, cols, kTopTemperature);

  ml::Service* svc = sh->service.get();
  std::optional<ml::Level> level = ml_level(cfg.mode);
  if (svc != nullptr) {
    svc->protect(ctx, 0, ml::ProtectedRegion{0, &st.step, sizeof(st.step), 1});
    svc->protect(ctx, 1, ml::ProtectedRegion{1, st.u.data(), sizeof(double), st.u.size()});
  }
  if (cfg.mode == CkptMode::kTransparent) {
    ctx.set_save_handler([&st] { return save_state(st); });
  }

  std::uint64_t resumed = 0;
  bool resuming = false;
  if (ctx.restarted()) {
    load_state(ctx.restored_blob(), st);
    ctx.restart_state();
    resumed = st.step;
    resuming = true;
  } else if (svc != nullptr && sh->recover) {
    resumed = co_await svc->recover(ctx, *sh->recover);
    resuming = true;
  }

  if (r == 0) sh->resumed = resumed;
  std::vector<double> next(st.u.size());
  while (st.step < cfg.iterations) {
    const std::uint64_t step = st.step;
    if (cfg.ckpt_every != 0 && step > 0 && step % cfg.ckpt_every == 0 && !(resuming && step == resumed)) {
      Ticks t0 = ctx.now();
      if (cfg.mode == CkptMode::kTransparent) {
        co_await ctx.checkpoint();
      } else if (level && svc != nullptr) {
        co_await svc->checkpoint(ctx, step, *level);
      }
      st.ckpts.emplace_back(t0, ctx.now());
    }
    co_await ctx.fault_point(step);

    // Ghost rows: our first row goes up, our last row goes down.
    if (r > 0) co_await ctx.send(r - 1, ghost_tag(step, 0), row_bytes(st.u, 1, cols));
    if (r < R - 1) co_await ctx.send(r + 1, ghost_tag(step, 1), row_bytes(st.u, L, cols));
    if (r > 0) put_row(st.u, 0, cols, (co_await ctx.recv(r - 1, ghost_tag(step, 1))).payload);
    if (r < R - 1) put_row(st.u, L + 1, cols, (co_await ctx.recv(r + 1, ghost_tag(step, 0))).payload);

    double delta = 0;
    next = st.u;
    for (int i = 1; i <= L; ++i) {
      int gi = g0 + i - 1;
      if (gi == 0 || gi == cfg.rows - 1) continue;
      for (int j = 1; j < cols - 1; ++j) {
        auto at = [&](int a, int b) { return st.u[static_cast<std::size_t>(a) * cols + b]; };
        double v = 0.25 * (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1));
        delta = std::max(delta, std::fabs(v - at(i, j)));
        next[static_cast<std::size_t>(i) * cols + j] = v;
      }
    }
    // Copy, don't swap: the protected region points at st.u's buffer.
    std::copy(next.begin(), next.end(), st.u.begin());
    std::uint64_t extra = cfg.jitter == 0 ? 0 : rng() % (cfg.jitter + 1);
    co_await ctx.compute(static_cast<std::uint64_t>(L) * cols + extra);
    st.residual = co_await ctx.allreduce_max(delta);
    ++st.step;
  }
  st.done = true;
  if (svc != nullptr) svc->finalize(ctx);
}

}  // namespace

void HeatdisConfig::validate(int n_ranks) const {
  if (rows < 3 || cols < 3) throw Error(ErrorCode::kInvalidArgument, "heatdis grid must be at least 3x3");
  if (iterations < 1) throw Error(ErrorCode::kInvalidArgument, "heatdis needs at least one iteration");
  if (n_ranks < 1 || rows % n_ranks != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("{} rows do not divide among {} ranks", rows, n_ranks));
  }
}

std::vector<double> heatdis_initial(int rows, int cols) {
  std::vector<double> g(static_cast<std::size_t>(rows) * cols, 0.0);
  std::fill_n(g.begin(), cols, kTopTemperature);
  return g;
}

double jacobi_step(std::vector<double>& grid, int rows, int cols) {
  std::vector<double> next = grid;
  double delta = 0;
  for (int i = 1; i < rows - 1; ++i) {
    for (int j = 1; j < cols - 1; ++j) {
      auto at = [&](int a, int b) { return grid[static_cast<std::size_t>(a) * cols + b]; };
      double v = 0.25 * (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1));
      delta = std::max(delta, std::fabs(v - at(i, j)));
      next[static_cast<std::size_t>(i) * cols + j] = v;
    }
  }
  grid = std::move(next);
  return delta;
}

std::string grid_digest(const std::vector<double>& grid) {
  ByteWriter w;
  for (double v : grid) w.f64(v);
  return sha256_hex(w.bytes());
}

HeatdisResult run_heatdis(const HeatdisRun& run) {
  const JobSetup& s = run.setup;
  auto sh = std::make_unique<Shared>();
  sh->cfg = run.cfg;
  sh->n_ranks = s.job.n_tasks();
  sh->seed = s.job.seed;
  sh->recover = run.recover;
  sh->cfg.validate(sh->n_ranks);
  sh->ranks.resize(static_cast<std::size_t>(sh->n_ranks));

  RuntimeOptions opts = s.opts;
  opts.checkpointing_enabled = run.cfg.mode == CkptMode::kTransparent;
  std::unique_ptr<Runtime> rt;
  if (run.restore) {
    rt = Runtime::restore(*run.restore, s.net, s.job, opts);
  } else {
    rt = std::make_unique<Runtime>(s.net, s.job, opts);
  }
  if (run.fault) {
    run.fault->validate(run.cfg.iterations, s.job.n_processes);
    rt->set_fault_plan(*run.fault);
  }
  for (const auto& [k, v] : s.manifest_extra) rt->manifest_extra()[k] = v;
  Shared* raw = sh.get();
  rt->spawn_app([raw](TaskContext& ctx) { return heatdis_rank(ctx, raw); });
  if (ml_level(run.cfg.mode) || run.recover) {
    sh->service = std::make_unique<ml::Service>(*rt, run.cfg.ml);
  }

  HeatdisResult res;
  res.status = rt->run();
  res.walltime = rt->app_finish_time();
  res.counters = rt->counters();
  res.events = rt->ckpt_events();
  res.manifest = rt->last_manifest();
  res.resumed_step = sh->resumed;
  std::vector<std::vector<std::pair<Ticks, Ticks>>> spans;
  for (const auto& st : sh->ranks) spans.push_back(st.ckpts);
  res.ckpt_ticks = rt->ckpt_spans().empty() ? checkpoint_extent(spans) : checkpoint_extent(rt->ckpt_spans());
  if (sh->service) {
    for (int r = 0; r < sh->n_ranks; ++r) {
      if (auto l = sh->service->recovered_from(r)) res.recovered_from[r] = *l;
    }
  }
  if (res.status == Runtime::RunStatus::kCompleted) {
    const int L = run.cfg.rows / sh->n_ranks;
    for (const auto& st : sh->ranks) {
      res.grid.insert(res.grid.end(), st.u.begin() + run.cfg.cols,
                      st.u.begin() + static_cast<std::ptrdiff_t>(L + 1) * run.cfg.cols);
    }
    res.residual = sh->ranks.front().residual;
    res.digest = grid_digest(res.grid);
  }
  return res;
}

}  // namespace mcr::bench
