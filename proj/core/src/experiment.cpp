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

// Experiment drivers behind the command-line tool.

#include <charconv>
#include <cstring>
#include <fstream>

#include <unistd.h>

#include <fmt/format.h>

#include "mcr/bench.hpp"
#include "mcr/ckpt.hpp"
#include "mcr/error.hpp"

namespace mcr::bench {

namespace fs = std::filesystem;

std::string_view to_string(CkptMode m) {
  switch (m) {
    case CkptMode::kNone: return "none";
    case CkptMode::kTransparent: return "transparent";
    case CkptMode::kL1: return "l1";
    case CkptMode::kL2: return "l2";
    case CkptMode::kL3: return "l3";
    case CkptMode::kL4: return "l4";
  }
  return "?";
}

CkptMode parse_ckpt_mode(std::string_view text) {
  for (CkptMode m : {CkptMode::kNone, CkptMode::kTransparent, CkptMode::kL1, CkptMode::kL2, CkptMode::kL3,
                     CkptMode::kL4}) {
    if (to_string(m) == text) return m;
  }
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown checkpoint mode '{}'", text));
}

std::optional<ml::Level> ml_level(CkptMode m) {
  switch (m) {
    case CkptMode::kL1: return ml::Level::kL1;
    case CkptMode::kL2: return ml::Level::kL2;
    case CkptMode::kL3: return ml::Level::kL3;
    case CkptMode::kL4: return ml::Level::kL4;
    default: return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// RunSpec

namespace {

template <typename T>
T number(const std::map<std::string, std::string>& kv, const std::string& key, T fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  T v{};
  const std::string& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kFormatError, fmt::format("bad value '{}' for {}", s, key));
  }
  return v;
}

std::string text(const std::map<std::string, std::string>& kv, const std::string& key, std::string fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

constexpr std::string_view kExtraPrefix = "run.";

}  // namespace

ml::GroupConfig RunSpec::group() const {
  ml::GroupConfig g;
  if (group_k > 0) {
    g.k = group_k;
    g.m = group_m >= 0 ? group_m : 2;
    return g;
  }
  // Largest shape up to (4, 2) that the process count can hold.
  g.k = np >= 6 && np % 4 == 0 ? 4 : std::max(1, np / 2);
  while (np % g.k != 0) --g.k;
  g.m = group_m >= 0 ? group_m : std::min(2, np - g.k);
  return g;
}

std::map<std::string, std::string> RunSpec::to_map() const {
  return {
      {"net_option", net_option},
      {"net_file", net_file},
      {"np", std::to_string(np)},
      {"tasks_per_proc", std::to_string(tasks_per_proc)},
      {"bench", bench},
      {"ckpt_mode", std::string(to_string(mode))},
      {"ckpt_every", std::to_string(ckpt_every)},
      {"seed", std::to_string(seed)},
      {"out", out.string()},
      {"rows", std::to_string(rows)},
      {"cols", std::to_string(cols)},
      {"iterations", std::to_string(iterations)},
      {"jitter", std::to_string(jitter)},
      {"group_k", std::to_string(group_k)},
      {"group_m", std::to_string(group_m)},
  };
}

RunSpec RunSpec::from_map(const std::map<std::string, std::string>& kv) {
  RunSpec s;
  s.net_option = text(kv, "net_option", s.net_option);
  s.net_file = text(kv, "net_file", s.net_file);
  s.np = number(kv, "np", s.np);
  s.tasks_per_proc = number(kv, "tasks_per_proc", s.tasks_per_proc);
  s.bench = text(kv, "bench", s.bench);
  s.mode = parse_ckpt_mode(text(kv, "ckpt_mode", "none"));
  s.ckpt_every = number(kv, "ckpt_every", s.ckpt_every);
  s.seed = number(kv, "seed", s.seed);
  s.out = text(kv, "out", s.out.string());
  s.rows = number(kv, "rows", s.rows);
  s.cols = number(kv, "cols", s.cols);
  s.iterations = number(kv, "iterations", s.iterations);
  s.jitter = number(kv, "jitter", s.jitter);
  s.group_k = number(kv, "group_k", s.group_k);
  s.group_m = number(kv, "group_m", s.group_m);
  return s;
}

std::string RunSpec::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += fmt::format("{}={}\n", k, v);
  return out;
}

RunSpec RunSpec::from_text(std::string_view body) {
  std::map<std::string, std::string> kv;
  while (!body.empty()) {
    auto nl = body.find('\n');
    std::string_view line = body.substr(0, nl);
    body = nl == std::string_view::npos ? std::string_view{} : body.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::kFormatError, fmt::format("run spec line without '=': {}", line));
    }
    kv[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 1));
  }
  return from_map(kv);
}

JobSetup make_setup(const RunSpec& spec) {
  JobSetup s;
  if (spec.net_file.empty()) {
    s.net = config::parse_config(config::builtin_multirail_tcp());
  } else {
    Bytes raw = ckpt::read_file(spec.net_file);
    s.net = config::parse_config(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
  }
  s.job.n_processes = spec.np;
  s.job.tasks_per_process = spec.tasks_per_proc;
  s.job.seed = spec.seed;
  s.job.ckpt_dir = spec.out / "ckpt";
  s.job.net_option = spec.net_option;
  s.job.validate();
  s.opts.job_id = spec.bench;
  for (const auto& [k, v] : spec.to_map()) s.manifest_extra[std::string(kExtraPrefix) + k] = v;
  return s;
}

// ---------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& body) {
  fs::create_directories(path.parent_path());
  ckpt::write_file_atomic(path, ByteSpan(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
}

std::string status_name(Runtime::RunStatus s) {
  return s == Runtime::RunStatus::kCompleted ? "completed" : "halted";
}

HeatdisConfig heatdis_config(const RunSpec& spec) {
  HeatdisConfig c;
  c.rows = spec.rows;
  c.cols = spec.cols;
  c.iterations = spec.iterations;
  c.ckpt_every = spec.ckpt_every;
  c.mode = spec.mode;
  c.jitter = spec.jitter;
  c.ml.group = spec.group();
  return c;
}

std::string shape_key(const RunSpec& spec) {
  return fmt::format("{}:{}x{}:{}x{}:{}:{}", spec.bench, spec.np, spec.tasks_per_proc, spec.rows, spec.cols,
                     spec.iterations, spec.net_option);
}

fs::path write_heatdis_csv(const RunSpec& spec, const fs::path& path, const HeatdisResult& r) {
  std::string body =
      "bench,np,tasks_per_proc,ckpt_mode,ckpt_every,seed,iterations,status,resumed_step,residual,digest,"
      "virtual_ticks,checkpoint_ticks,checkpoints,data_frames,control_frames,connections,reconnects\n";
  body += fmt::format("heatdis,{},{},{},{},{},{},{},{},{:.17g},{},{},{},{},{},{},{},{}\n", spec.np,
                      spec.tasks_per_proc, to_string(spec.mode), spec.ckpt_every, spec.seed, spec.iterations,
                      status_name(r.status), r.resumed_step, r.residual, r.digest, r.walltime, r.ckpt_ticks,
                      r.counters.checkpoints, r.counters.data_frames, r.counters.control_frames,
                      r.counters.connections, r.counters.reconnects);
  write_text(path, body);
  return path;
}

fs::path write_comm_csv(const fs::path& path, const CommResult& r) {
  std::string body = "size_bytes,pre_ticks,transient_ticks,post_ticks,reconnects,census\n";
  for (const auto& row : r.rows) {
    body += fmt::format("{},{},{},{},{},{}\n", row.size, row.pre, row.transient, row.post, r.reconnects,
                        r.census);
  }
  write_text(path, body);
  return path;
}

CommConfig comm_config(const RunSpec& spec) {
  if (spec.mode != CkptMode::kNone && spec.mode != CkptMode::kTransparent) {
    throw Error(ErrorCode::kInvalidArgument, "the comm bench supports ckpt modes none and transparent only");
  }
  CommConfig c;
  c.with_checkpoint = spec.mode == CkptMode::kTransparent;
  return c;
}

}  // namespace

ExperimentOutcome run_experiment(const RunSpec& spec, std::optional<FaultPlan> fault) {
  JobSetup setup = make_setup(spec);
  fs::create_directories(spec.out);
  write_text(spec.out / "run.conf", spec.to_text());
  ExperimentOutcome out;
  const std::string suffix = fault ? "_inject" : "";

  if (spec.bench == "heatdis") {
    HeatdisRun run{setup, heatdis_config(spec), fault, std::nullopt, std::nullopt};
    HeatdisResult r = run_heatdis(run);
    out.status = r.status;
    out.digest = r.digest;
    out.manifest = r.manifest;
    out.reports.push_back(write_heatdis_csv(spec, spec.out / fmt::format("heatdis{}.csv", suffix), r));
    if (!fault && r.status == Runtime::RunStatus::kCompleted) {
      HeatdisRun ref = run;
      ref.cfg.mode = CkptMode::kNone;
      ref.setup.job.ckpt_dir = spec.out / "ckpt-reference";
      HeatdisResult base = run_heatdis(ref);
      std::string key = shape_key(spec);
      Breakdown b = overhead_breakdown(RunRecord{"reference", spec.seed, key, base.walltime, 0, 0},
                                       RunRecord{std::string(to_string(spec.mode)), spec.seed, key, r.walltime,
                                                 r.ckpt_ticks, r.counters.reconnects});
      fs::path p = spec.out / "overhead.csv";
      write_text(p, breakdown_csv({b}));
      out.reports.push_back(p);
    }
  } else if (spec.bench == "comm") {
    if (fault) throw Error(ErrorCode::kInvalidArgument, "fault injection targets the heatdis bench");
    CommRun run{setup, comm_config(spec), std::nullopt};
    CommResult r = run_comm_bench(run);
    out.status = r.status;
    out.manifest = r.manifest;
    out.reports.push_back(write_comm_csv(spec.out / "comm.csv", r));
    if (r.status == Runtime::RunStatus::kCompleted && run.cfg.with_checkpoint) {
      CommRun ref = run;
      ref.cfg.with_checkpoint = false;
      ref.setup.job.ckpt_dir = spec.out / "ckpt-reference";
      CommResult base = run_comm_bench(ref);
      std::string key = shape_key(spec);
      Breakdown b = overhead_breakdown(RunRecord{"reference", spec.seed, key, base.walltime, 0, 0},
                                       RunRecord{std::string(to_string(spec.mode)), spec.seed, key, r.walltime,
                                                 r.ckpt_ticks, r.counters.reconnects});
      fs::path p = spec.out / "overhead.csv";
      write_text(p, breakdown_csv({b}));
      out.reports.push_back(p);
    }
  } else {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown bench '{}'", spec.bench));
  }
  return out;
}

ExperimentOutcome restart_experiment(const fs::path& manifest) {
  ckpt::Manifest m = ckpt::read_manifest(manifest);
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : m.extra) {
    if (k.rfind(kExtraPrefix, 0) == 0) kv[k.substr(kExtraPrefix.size())] = v;
  }
  if (kv.empty()) throw Error(ErrorCode::kFormatError, "manifest does not describe the job to restart");
  RunSpec spec = RunSpec::from_map(kv);
  JobSetup setup = make_setup(spec);
  ExperimentOutcome out;
  if (spec.bench == "heatdis") {
    HeatdisRun run{setup, heatdis_config(spec), std::nullopt, manifest, std::nullopt};
    HeatdisResult r = run_heatdis(run);
    out.status = r.status;
    out.digest = r.digest;
    out.manifest = r.manifest;
    out.reports.push_back(write_heatdis_csv(spec, spec.out / "heatdis_restart.csv", r));
  } else {
    CommRun run{setup, comm_config(spec), manifest};
    CommResult r = run_comm_bench(run);
    out.status = r.status;
    out.manifest = r.manifest;
    out.reports.push_back(write_comm_csv(spec.out / "comm_restart.csv", r));
  }
  return out;
}

ExperimentOutcome recover_experiment(const fs::path& dir, ml::Level level) {
  Bytes raw = ckpt::read_file(dir / "run.conf");
  RunSpec spec = RunSpec::from_text(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
  if (spec.bench != "heatdis") throw Error(ErrorCode::kInvalidArgument, "recovery targets the heatdis bench");
  JobSetup setup = make_setup(spec);
  HeatdisRun run{setup, heatdis_config(spec), std::nullopt, std::nullopt, level};
  HeatdisResult r = run_heatdis(run);
  ExperimentOutcome out;
  out.status = r.status;
  out.digest = r.digest;
  out.reports.push_back(write_heatdis_csv(spec, spec.out / "heatdis_recover.csv", r));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Scenario {
  std::optional<ml::Level> level;
  std::unique_ptr<ml::Service> svc;
  std::uint8_t region[130] = {};
};

sched::Co<> scenario_task(TaskContext& ctx, Scenario* sc) {
  if (sc->svc) sc->svc->protect(ctx, 7, ml::ProtectedRegion{7, sc->region, 1, sizeof(sc->region)});
  co_await ctx.compute(500);
  if (sc->level) co_await sc->svc->checkpoint(ctx, 1, *sc->level);
  co_await ctx.sleep_for(200);
  co_await ctx.compute(500);
  if (sc->svc) sc->svc->finalize(ctx);
}

}  // namespace

Ticks oversubscription_scenario(std::optional<ml::Level> level, ml::HelperMode mode, bool io_yield) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / fmt::format("mcr-oversub-{}-{}", ::getpid(), counter++);
  JobSetup s;
  s.net = config::parse_config(config::builtin_multirail_tcp());
  s.job.n_processes = 1;
  s.job.net_option = "multirail_tcp";
  s.job.ckpt_dir = dir;
  s.job.cost.local_write_per_byte = 1;
  s.job.cost.pfs_per_byte = 1;
  s.job.cost.ctx_switch = 5;
  s.opts.kvs = RuntimeOptions::KvsMode::kInproc;
  s.opts.sched.io_yield = io_yield;
  s.opts.checkpointing_enabled = false;

  Scenario sc;
  sc.level = level;
  Ticks finish = 0;
  {
    Runtime rt(s.net, s.job, s.opts);
    Scenario* raw = &sc;
    rt.spawn_app([raw](TaskContext& ctx) { return scenario_task(ctx, raw); });
    if (level) {
      ml::Options o;
      o.group = ml::GroupConfig{1, 0, 1};
      o.mode = mode;
      sc.svc = std::make_unique<ml::Service>(rt, o);
    }
    rt.run();
    finish = rt.app_finish_time();
    sc.svc.reset();
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  return finish;
}

}  // namespace mcr::bench
