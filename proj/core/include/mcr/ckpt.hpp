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

#ifndef MCR_CKPT_HPP_
#define MCR_CKPT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mcr/bytes.hpp"
#include "mcr/cost_model.hpp"
#include "mcr/multirail.hpp"
#include "mcr/sched.hpp"

namespace mcr::ckpt {

enum class CkptState { kError, kCheckpoint, kRestart, kIgnore };

std::string_view to_string(CkptState s);

struct TaskImage {
  int rank = 0;
  sched::TaskKind kind = sched::TaskKind::kApp;
  int lane = 0;
  Bytes blob;

  friend bool operator==(const TaskImage&, const TaskImage&) = default;
};

struct EndpointImage {
  int remote = 0;
  rail::RouteKind kind = rail::RouteKind::kStatic;
  std::string conn_info;

  friend bool operator==(const EndpointImage&, const EndpointImage&) = default;
};

struct RailSection {
  std::string rail;
  std::vector<EndpointImage> endpoints;

  friend bool operator==(const RailSection&, const RailSection&) = default;
};

// Little-endian layout:
//   "MCRIMG01" u32 version u64 epoch u64 process i64 virtual_time
//   u32 n_tasks   { u64 rank u8 kind u32 lane u64 len blob }
//   u32 n_rails   { str16 rail u32 n { u64 remote u8 kind str16 conn_info } }
//   u32 crc32 over every preceding byte
struct ProcessImage {
  static constexpr std::string_view kMagic = "MCRIMG01";
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::uint64_t epoch = 0;
  int process = 0;
  Ticks virtual_time = 0;
  std::vector<TaskImage> tasks;
  std::vector<RailSection> rails;

  friend bool operator==(const ProcessImage&, const ProcessImage&) = default;
};

Bytes encode_image(const ProcessImage& image);
// Throws kCrcMismatch when the checksum fails, kFormatError otherwise.
ProcessImage decode_image(ByteSpan bytes);
// Throws kMissingImage, kCrcMismatch, kFormatError.
ProcessImage read_image(const std::filesystem::path& path);

struct Manifest {
  std::string job_id;
  std::uint64_t epoch = 0;
  int n_processes = 0;
  int tasks_per_process = 0;
  std::string config_sha256;
  Ticks virtual_ticks = 0;
  std::int64_t wall_unix_ms = 0;
  std::uint64_t dynamic_routes = 0;  // census taken just before rails closed
  std::vector<std::string> images;
  // Free-form extra keys (the CLI records how to rebuild the job).
  std::map<std::string, std::string> extra;
};

std::string encode_manifest(const Manifest& m);
// Throws kFormatError.
Manifest parse_manifest(std::string_view text);
// Throws kMissingImage if the file cannot be read.
Manifest read_manifest(const std::filesystem::path& path);

std::filesystem::path epoch_dir(const std::filesystem::path& ckpt_dir, std::string_view job_id,
                                std::uint64_t epoch);
std::string image_name(int process);
inline constexpr std::string_view kManifestName = "manifest.txt";

// Writes bytes to `path` via a temporary file and rename. Throws kIoError.
void write_file_atomic(const std::filesystem::path& path, ByteSpan bytes);
Bytes read_file(const std::filesystem::path& path);

// Keeps the `keep` newest epoch-<n> directories of a job, deletes the rest.
void apply_retention(const std::filesystem::path& ckpt_dir, std::string_view job_id,
                     std::size_t keep = 2);

struct BudgetParams {
  double ts = 0;   // seconds of pure computation
  double tc = 0;   // seconds per checkpoint
  double tau = 0;  // seconds between checkpoints
  double f() const { return 1.0 / tau; }
};

struct Overhead {
  double duration = 0;  // D
  double ratio = 0;     // Ovh = D / Ts
};

// tau = tc / budget. Throws kDomainError unless both are positive.
double checkpoint_period(double tc, double budget);
// D = Ts + (Ts / tau) * Tc, Ovh = 1 + Tc / tau. Ts and tau must be positive,
// Tc non-negative; otherwise kDomainError.
Overhead overhead(double ts, double tc, double tau);
inline Overhead overhead(const BudgetParams& p) { return overhead(p.ts, p.tc, p.tau); }

}  // namespace mcr::ckpt

#endif  // MCR_CKPT_HPP_
