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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//
//   acceptance_test                 run all
//   acceptance_test --criterion 4   run one

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mcr/bench.hpp"
#include "mcr/ckpt.hpp"
#include "mcr/multilevel.hpp"
#include "mcr/signaling.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;
using mcr::Bytes;
using mcr::ErrorCode;
using mcr::Runtime;
using mcr::testing::TempDir;
using namespace mcr::bench;

// Collects failed expectations; a criterion passes when none were recorded.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    std::string out;
    for (std::size_t i = 0; i < failures_.size() && i < 5; ++i) out += "\n    " + failures_[i];
    if (failures_.size() > 5) out += fmt::format("\n    ... {} more", failures_.size() - 5);
    return out;
  }
  void note(std::string s) { notes_.push_back(std::move(s)); }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string run_capture(const std::string& cmd) {
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (p == nullptr) return out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p) != nullptr) out += buf;
  ::pclose(p);
  return out;
}

std::string tool() { return MCR_TOOL_PATH; }

RunSpec spec_at(const fs::path& out, int np, int tpp) {
  RunSpec s;
  s.np = np;
  s.tasks_per_proc = tpp;
  s.out = out;
  return s;
}

HeatdisRun heat_run(const RunSpec& s, int rows, int cols, std::uint64_t iters) {
  HeatdisRun r;
  r.setup = make_setup(s);
  r.cfg.rows = rows;
  r.cfg.cols = cols;
  r.cfg.iterations = iters;
  r.cfg.jitter = s.jitter;
  return r;
}

// ---------------------------------------------------------------------------

void budget(Check& c) {
  std::string out = run_capture(tool() + " budget --tc 60 --overhead 0.01");
  c.expect(out == "tau_seconds=6000\n", "cli printed '" + out + "'");
  c.expect(mcr::ckpt::checkpoint_period(60, 0.01) == 6000.0, "period != 6000");
  for (double ts : {1.0, 100.0, 86400.0, 1e9}) {
    double ovh = mcr::ckpt::overhead(ts, 60, 6000).ratio;
    c.expect(std::fabs(ovh - 1.01) <= 1e-12, fmt::format("Ovh({}) = {:.17g}", ts, ovh));
  }
}

void transparent_restart(Check& c) {
  TempDir d;
  RunSpec s = spec_at(d.path(), 4, 2);
  HeatdisRun clean = heat_run(s, 64, 64, 100);
  HeatdisResult ref = run_heatdis(clean);
  c.expect(ref.status == Runtime::RunStatus::kCompleted, "reference run halted");

  HeatdisRun faulty = clean;
  faulty.cfg.mode = CkptMode::kTransparent;
  faulty.cfg.ckpt_every = 50;
  faulty.fault = mcr::FaultPlan{75, {0, 1, 2, 3}};
  HeatdisResult killed = run_heatdis(faulty);
  c.expect(killed.status == Runtime::RunStatus::kHalted, "faulty run did not halt");
  c.expect(killed.manifest.has_value(), "no manifest written");
  if (!killed.manifest) return;
  c.expect(mcr::ckpt::read_manifest(*killed.manifest).epoch == 1, "unexpected epoch");

  HeatdisRun restart = clean;
  restart.cfg.mode = CkptMode::kTransparent;
  restart.cfg.ckpt_every = 50;
  restart.restore = *killed.manifest;
  HeatdisResult back = run_heatdis(restart);
  c.expect(back.status == Runtime::RunStatus::kCompleted, "restart halted");
  c.expect(back.resumed_step == 50, fmt::format("resumed at {}", back.resumed_step));
  c.expect(back.digest == ref.digest, "digest " + back.digest + " != " + ref.digest);
  c.note("digest " + ref.digest);
}

void two_level_protocol(Check& c) {
  int checkpoints = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    TempDir d;
    RunSpec s = spec_at(d.path(), 4, 2);
    s.seed = seed * 7919;
    s.jitter = 200;
    HeatdisRun r = heat_run(s, 16, 16, 10);
    r.cfg.mode = CkptMode::kTransparent;
    r.cfg.ckpt_every = 5;
    HeatdisResult res = run_heatdis(r);
    c.expect(res.status == Runtime::RunStatus::kCompleted, fmt::format("seed {} halted", seed));
    std::map<std::uint64_t, std::map<int, int>> writers;
    std::map<std::uint64_t, std::set<mcr::ckpt::CkptState>> states;
    std::map<std::uint64_t, int> returns;
    for (const auto& ev : res.events) {
      if (ev.kind == mcr::CkptEvent::Kind::kImageWrite) ++writers[ev.epoch][ev.process];
      if (ev.kind == mcr::CkptEvent::Kind::kReturn) {
        states[ev.epoch].insert(ev.state);
        ++returns[ev.epoch];
      }
    }
    c.expect(writers.size() == 1, fmt::format("seed {}: {} epochs with writers", seed, writers.size()));
    for (const auto& [epoch, per_proc] : writers) {
      ++checkpoints;
      c.expect(per_proc.size() == 4, fmt::format("seed {} epoch {}: {} writing processes", seed, epoch,
                                                 per_proc.size()));
      for (const auto& [p, n] : per_proc)
        c.expect(n == 1, fmt::format("seed {} epoch {}: process {} wrote {} images", seed, epoch, p, n));
      c.expect(states[epoch].size() == 1, fmt::format("seed {} epoch {}: mixed states", seed, epoch));
      c.expect(returns[epoch] == 8, fmt::format("seed {} epoch {}: {} returns", seed, epoch, returns[epoch]));
      c.expect(*states[epoch].begin() == mcr::ckpt::CkptState::kCheckpoint, "state is not CHECKPOINT");
    }
  }
  c.expect(checkpoints == 50, fmt::format("{} checkpoints observed", checkpoints));
}

void rail_closing(Check& c, const std::string& net_file, const std::string& option) {
  TempDir d;
  RunSpec s = spec_at(d.path(), 4, 1);
  s.net_file = net_file;
  s.net_option = option;
  s.bench = "comm";
  CommRun first;
  first.setup = make_setup(s);
  first.cfg.stop_after_checkpoint = true;
  CommResult a = run_comm_bench(first);
  c.expect(a.status == Runtime::RunStatus::kHalted, option + ": first run did not stop");
  c.expect(a.manifest.has_value(), option + ": no manifest");
  if (!a.manifest) return;
  mcr::ckpt::Manifest m = mcr::ckpt::read_manifest(*a.manifest);
  c.expect(m.dynamic_routes > 0, option + ": empty census");

  // Scan every image for endpoints of rails that may not be saved.
  auto rails = first.setup.net.rails_for(option);
  std::size_t bad = 0;
  std::size_t saved = 0;
  for (const auto& name : m.images) {
    auto img = mcr::ckpt::read_image(a.manifest->parent_path() / name);
    for (const auto& sec : img.rails) {
      const mcr::config::RailSpec* spec = first.setup.net.find_rail(sec.rail);
      if (spec == nullptr || !spec->checkpointable) bad += sec.endpoints.size();
      else saved += sec.endpoints.size();
    }
  }
  c.expect(bad == 0, fmt::format("{}: {} non-checkpointable endpoints in images", option, bad));

  CommRun second;
  second.setup = first.setup;
  second.restore = *a.manifest;
  CommResult b = run_comm_bench(second);
  c.expect(b.status == Runtime::RunStatus::kCompleted, option + ": restart halted");
  c.expect(b.reconnects == m.dynamic_routes,
           fmt::format("{}: reconnects {} vs census {}", option, b.reconnects, m.dynamic_routes));
  for (const auto& row : b.rows) {
    c.expect(row.post == row.pre, fmt::format("{}: size {} post {} pre {}", option, row.size, row.post, row.pre));
  }
  c.note(fmt::format("{}: census {}, reconnects {}, saved endpoints {}", option, m.dynamic_routes, b.reconnects,
                     saved));
}

void rail_closing(Check& c) {
  rail_closing(c, "", "multirail_tcp");
  rail_closing(c, mcr::testing::source_path("configs/mixed.conf"), "mixed");
}

void routing(Check& c) {
  using mcr::signal::ProcessId;
  using mcr::signal::RouteView;
  std::mt19937_64 rng(2024);
  std::size_t ring_mismatch = 0;
  std::size_t shortcut_worse = 0;
  std::size_t no_progress = 0;
  std::size_t pairs = 0;
  for (int n = 2; n <= 64; ++n) {
    auto ring = [n](ProcessId p) { return mcr::signal::ring_view(p, n); };
    std::map<ProcessId, std::set<ProcessId>> extra;
    for (int i = 0; i < 20; ++i) {
      auto a = static_cast<ProcessId>(rng() % n);
      auto b = static_cast<ProcessId>(rng() % n);
      if (a == b) continue;
      extra[a].insert(b);
      extra[b].insert(a);
    }
    auto with_shortcuts = [&](ProcessId p) {
      RouteView v = mcr::signal::ring_view(p, n);
      for (ProcessId q : extra[p]) v.neighbors.insert(q);
      return v;
    };
    for (ProcessId s = 0; s < n; ++s) {
      for (ProcessId t = 0; t < n; ++t) {
        if (s == t) continue;
        ++pairs;
        try {
          auto ring_path = mcr::signal::route_path(s, t, static_cast<std::uint32_t>(n), ring);
          if (ring_path.size() != mcr::signal::distance(s, t)) {
            if (ring_mismatch++ == 0) {
              c.expect(false, fmt::format("N={} {}->{}: ring hops {} != |s-t| {}", n, s, t, ring_path.size(),
                                          mcr::signal::distance(s, t)));
            }
          }
          auto sc_path = mcr::signal::route_path(s, t, static_cast<std::uint32_t>(n), with_shortcuts);
          if (sc_path.size() > ring_path.size()) {
            if (shortcut_worse++ == 0) {
              c.expect(false, fmt::format("N={} {}->{}: {} hops with shortcuts, {} without", n, s, t,
                                          sc_path.size(), ring_path.size()));
            }
          }
        } catch (const mcr::Error& e) {
          if (no_progress++ == 0) c.expect(false, fmt::format("N={} {}->{}: {}", n, s, t, e.what()));
        }
      }
    }
  }
  c.note(fmt::format("{} pairs; ring hops != |s-t|: {}; shortcuts worse: {}; routing errors: {}", pairs,
                     ring_mismatch, shortcut_worse, no_progress));
}

std::uint8_t slow_mul(std::uint8_t a, std::uint8_t b) {
  unsigned acc = 0;
  unsigned x = a;
  for (int bit = 0; bit < 8; ++bit) {
    if (b & (1u << bit)) acc ^= x;
    x <<= 1;
    if (x & 0x100) x ^= 0x11D;
  }
  return static_cast<std::uint8_t>(acc);
}

void erasure_coding(Check& c) {
  c.expect(slow_mul(0x02, 0x87) == 0x13, "oracle disagrees with 0x13");
  c.expect(mcr::ml::gf::mul(0x02, 0x87) == 0x13, "gf::mul(0x02, 0x87) != 0x13");
  std::mt19937_64 rng(99);
  std::size_t decodes = 0;
  for (int k = 1; k <= 7; ++k) {
    for (int m = 1; k + m <= 8; ++m) {
      const int total = k + m;
      bool loss_refused = false;
      for (int trial = 0; trial < 100; ++trial) {
        const std::size_t len = 1 + rng() % 96;
        std::vector<Bytes> data(static_cast<std::size_t>(k), Bytes(len));
        for (auto& d : data)
          for (auto& b : d) b = static_cast<std::uint8_t>(rng());
        auto parity = mcr::ml::rs_encode(data, m);
        std::vector<mcr::ml::Shard> all;
        for (int i = 0; i < k; ++i) all.push_back({i, data[static_cast<std::size_t>(i)]});
        for (int j = 0; j < m; ++j) all.push_back({k + j, parity[static_cast<std::size_t>(j)]});
        for (unsigned mask = 0; mask < (1u << total); ++mask) {
          const int bits = __builtin_popcount(mask);
          if (bits != k && bits != k - 1) continue;
          std::vector<mcr::ml::Shard> keep;
          for (int i = 0; i < total; ++i)
            if (mask & (1u << i)) keep.push_back(all[static_cast<std::size_t>(i)]);
          if (bits == k) {
            ++decodes;
            if (mcr::ml::rs_decode(keep, k, m) != data) {
              c.expect(false, fmt::format("k={} m={} mask {:#x}: decode differs", k, m, mask));
            }
          } else if (!loss_refused) {
            try {
              mcr::ml::rs_decode(keep, k, m);
            } catch (const mcr::Error& e) {
              loss_refused = e.code() == ErrorCode::kInsufficientShards;
            }
          }
        }
      }
      c.expect(loss_refused, fmt::format("k={} m={}: m+1 losses were not refused", k, m));
    }
  }
  c.note(fmt::format("{} survivor-set decodes", decodes));
}

void multilevel(Check& c) {
  TempDir d;
  RunSpec s = spec_at(d.path(), 8, 1);
  HeatdisRun clean = heat_run(s, 64, 64, 100);
  const std::string want = run_heatdis(clean).digest;

  auto scenario = [&](CkptMode mode, std::vector<int> victims, std::optional<mcr::ml::Level> expect_from,
                      int probe_rank) {
    TempDir dir;
    RunSpec rs = spec_at(dir.path(), 8, 1);
    HeatdisRun r = heat_run(rs, 64, 64, 100);
    r.cfg.mode = mode;
    r.cfg.ckpt_every = 50;
    r.cfg.ml.group = mcr::ml::GroupConfig{4, 2, 1};
    r.fault = mcr::FaultPlan{75, victims};
    std::string label = fmt::format("{} kill {}", to_string(mode), victims.size());
    if (run_heatdis(r).status != Runtime::RunStatus::kHalted) {
      c.expect(false, label + ": did not halt");
      return;
    }
    r.fault.reset();
    r.recover = mcr::ml::Level::kL4;
    try {
      HeatdisResult back = run_heatdis(r);
      if (!expect_from) {
        c.expect(false, label + ": recovered, expected Unrecoverable");
        return;
      }
      c.expect(back.digest == want, label + ": digest differs");
      c.expect(back.resumed_step == 50, label + fmt::format(": resumed at {}", back.resumed_step));
      auto it = back.recovered_from.find(probe_rank);
      c.expect(it != back.recovered_from.end() && it->second == *expect_from,
               label + fmt::format(": rank {} not recovered from L{}", probe_rank, static_cast<int>(*expect_from)));
      c.note(label + ": recovered");
    } catch (const mcr::Error& e) {
      c.expect(!expect_from && e.code() == ErrorCode::kUnrecoverable, label + ": " + e.what());
      if (!expect_from) c.note(label + ": Unrecoverable");
    }
  };
  scenario(CkptMode::kL2, {1}, mcr::ml::Level::kL2, 1);
  scenario(CkptMode::kL3, {1, 2}, mcr::ml::Level::kL3, 2);
  scenario(CkptMode::kL3, {1, 2, 3}, std::nullopt, 0);
  scenario(CkptMode::kL4, {1, 2, 3}, mcr::ml::Level::kL4, 3);
}

void oversubscription(Check& c) {
  using mcr::ml::HelperMode;
  using mcr::ml::Level;
  const mcr::Ticks base = oversubscription_scenario(std::nullopt, HelperMode::kHelperTask, true);
  const mcr::Ticks helper_on = oversubscription_scenario(Level::kL4, HelperMode::kHelperTask, true);
  const mcr::Ticks helper_off = oversubscription_scenario(Level::kL4, HelperMode::kHelperTask, false);
  const mcr::Ticks inline_on = oversubscription_scenario(Level::kL4, HelperMode::kInline, true);
  const mcr::Ticks l1 = oversubscription_scenario(Level::kL1, HelperMode::kInline, true) - base;
  c.note(fmt::format("base {}, L1 cost {}, helper(io_yield) {}, helper(no io_yield) {}, inline {}", base, l1,
                     helper_on, helper_off, inline_on));
  c.expect(base == 1200, fmt::format("base finish {}", base));
  c.expect(l1 == 150, fmt::format("L1 cost {}", l1));
  c.expect(helper_on == base + l1, fmt::format("helper finish {} != {} + {}", helper_on, base, l1));
  c.expect(helper_on < inline_on, fmt::format("helper {} not below inline {}", helper_on, inline_on));
  c.expect(helper_off >= helper_on, fmt::format("io_yield off {} < on {}", helper_off, helper_on));
}

void determinism(Check& c) {
  struct Case {
    std::string args;
    std::vector<std::string> files;
  };
  const std::vector<Case> cases = {
      {"--bench heatdis --np 4 --tasks-per-proc 2 --ckpt-mode transparent --ckpt-every 50 --seed 11",
       {"heatdis.csv", "overhead.csv"}},
      {"--bench heatdis --np 8 --ckpt-mode l3 --ckpt-every 40 --seed 5 --jitter 30", {"heatdis.csv", "overhead.csv"}},
      {"--bench comm --np 4 --ckpt-mode transparent --seed 3", {"comm.csv", "overhead.csv"}},
  };
  TempDir d;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    std::map<std::string, std::string> first;
    std::string first_digest;
    for (int rep = 0; rep < 10; ++rep) {
      fs::path out = d.path() / fmt::format("c{}-r{}", ci, rep);
      std::string stdout_text = run_capture(fmt::format("{} run {} --out {}", tool(), cases[ci].args, out.string()));
      std::string digest;
      if (auto pos = stdout_text.find("digest="); pos != std::string::npos)
        digest = stdout_text.substr(pos, stdout_text.find('\n', pos) - pos);
      c.expect(stdout_text.find("status=completed") != std::string::npos,
               fmt::format("case {} rep {}: {}", ci, rep, stdout_text));
      if (rep == 0) first_digest = digest;
      c.expect(digest == first_digest, fmt::format("case {} rep {}: digest changed", ci, rep));
      for (const auto& f : cases[ci].files) {
        std::string body = mcr::testing::read_text(out / f);
        c.expect(!body.empty(), fmt::format("case {}: {} missing", ci, f));
        if (rep == 0) first[f] = body;
        c.expect(body == first[f], fmt::format("case {} rep {}: {} differs", ci, rep, f));
      }
    }
  }
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Check&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-9)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all = {
      {1, "budget algebra", budget},
      {2, "transparent restart equivalence", transparent_restart},
      {3, "two-level checkpoint protocol", two_level_protocol},
      {4, "rail-closing semantics", static_cast<void (*)(Check&)>(rail_closing)},
      {5, "greedy routing", routing},
      {6, "erasure coding", erasure_coding},
      {7, "multilevel recovery", multilevel},
      {8, "oversubscription", oversubscription},
      {9, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& cr : all) {
    if (only != 0 && cr.id != only) continue;
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    try {
      cr.fn(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << fmt::format("{} criterion {}: {} ({:.2f}s)", c.ok() ? "PASS" : "FAIL", cr.id, cr.name, secs)
              << c.summary() << "\n";
    for (const auto& n : c.notes()) std::cout << "    " << n << "\n";
    if (!c.ok()) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
