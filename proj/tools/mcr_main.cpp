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

// mcr: run, restart, recover and inject faults into benchmark jobs.

#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mcr/bench.hpp"
#include "mcr/ckpt.hpp"
#include "mcr/error.hpp"

namespace {

namespace fs = std::filesystem;
using mcr::bench::ExperimentOutcome;

void print_outcome(const ExperimentOutcome& out) {
  std::cout << "status=" << (out.status == mcr::Runtime::RunStatus::kCompleted ? "completed" : "halted")
            << "\n";
  if (!out.digest.empty()) std::cout << "digest=" << out.digest << "\n";
  if (out.manifest) std::cout << "manifest=" << out.manifest->string() << "\n";
  for (const auto& r : out.reports) std::cout << "report=" << r.string() << "\n";
}

mcr::bench::RunSpec read_spec(const fs::path& out) {
  mcr::Bytes raw = mcr::ckpt::read_file(out / "run.conf");
  return mcr::bench::RunSpec::from_text(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()));
}

std::vector<int> parse_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw mcr::Error(mcr::ErrorCode::kInvalidArgument, fmt::format("bad process id '{}'", item));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcr: message-passing runtime with checkpoint/restart"};
  app.require_subcommand(1);

  mcr::bench::RunSpec spec;
  std::string mode = "none";
  auto* run = app.add_subcommand("run", "Run a benchmark job and write CSV reports");
  run->add_option("--net", spec.net_option, "Network option name")->capture_default_str();
  run->add_option("--net-file", spec.net_file, "Network configuration file (default: built-in)");
  run->add_option("--np", spec.np, "Logical processes")->capture_default_str();
  run->add_option("--tasks-per-proc", spec.tasks_per_proc, "Tasks per process")->capture_default_str();
  run->add_option("--bench", spec.bench, "heatdis or comm")
      ->check(CLI::IsMember({"heatdis", "comm"}))
      ->capture_default_str();
  run->add_option("--ckpt-mode", mode, "none, transparent, l1, l2, l3 or l4")
      ->check(CLI::IsMember({"none", "transparent", "l1", "l2", "l3", "l4"}))
      ->capture_default_str();
  run->add_option("--ckpt-every", spec.ckpt_every, "Checkpoint interval in steps (0: never)")->capture_default_str();
  run->add_option("--seed", spec.seed, "Seed for timing jitter")->capture_default_str();
  run->add_option("--out", spec.out, "Output directory")->capture_default_str();
  run->add_option("--rows", spec.rows, "Heatdis grid rows")->capture_default_str();
  run->add_option("--cols", spec.cols, "Heatdis grid columns")->capture_default_str();
  run->add_option("--iterations", spec.iterations, "Heatdis iterations")->capture_default_str();
  run->add_option("--jitter", spec.jitter, "Extra compute units per step, seeded")->capture_default_str();
  run->add_option("--group-k", spec.group_k, "Multilevel data shards per group (0: auto)");
  run->add_option("--group-m", spec.group_m, "Multilevel parity shards per group (-1: auto)");

  std::string manifest;
  auto* restart = app.add_subcommand("restart", "Continue a job from a checkpoint manifest");
  restart->add_option("--manifest", manifest, "Path to manifest.txt")->required();

  int level = 4;
  fs::path out_dir = "out";
  auto* recover = app.add_subcommand("recover", "Re-run a heatdis job from its multilevel checkpoints");
  recover->add_option("--level", level, "Highest level to recover from")
      ->check(CLI::Range(1, 4))
      ->capture_default_str();
  recover->add_option("--out", out_dir, "Output directory of the original run")->capture_default_str();

  std::uint64_t step = 0;
  std::string ranks;
  auto* inject = app.add_subcommand("inject", "Re-run a job and kill processes at a step");
  inject->add_option("--step", step, "Iteration at which the fault fires")->required();
  inject->add_option("--ranks", ranks, "Comma-separated process ids")->required();
  inject->add_option("--out", out_dir, "Output directory of the original run")->capture_default_str();

  double tc = 0;
  double budget = 0;
  auto* budget_cmd = app.add_subcommand("budget", "Checkpoint period for an overhead budget");
  budget_cmd->add_option("--tc", tc, "Seconds per checkpoint")->required();
  budget_cmd->add_option("--overhead", budget, "Overhead fraction, e.g. 0.01")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      spec.mode = mcr::bench::parse_ckpt_mode(mode);
      print_outcome(mcr::bench::run_experiment(spec));
    } else if (*restart) {
      print_outcome(mcr::bench::restart_experiment(manifest));
    } else if (*recover) {
      print_outcome(mcr::bench::recover_experiment(out_dir, static_cast<mcr::ml::Level>(level)));
    } else if (*inject) {
      mcr::FaultPlan plan;
      plan.step = step;
      plan.victims = parse_list(ranks);
      print_outcome(mcr::bench::run_experiment(read_spec(out_dir), plan));
    } else if (*budget_cmd) {
      std::cout << fmt::format("tau_seconds={}\n", mcr::ckpt::checkpoint_period(tc, budget));
    }
  } catch (const mcr::Error& e) {
    std::cerr << "mcr: " << mcr::error_code_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mcr: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
