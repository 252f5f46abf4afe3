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

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mcr/ckpt.hpp"
#include "mcr/error.hpp"
#include "mcr/hash.hpp"

namespace mcr::ckpt {

std::string_view to_string(CkptState s) {
  switch (s) {
    case CkptState::kError: return "ERROR";
    case CkptState::kCheckpoint: return "CHECKPOINT";
    case CkptState::kRestart: return "RESTART";
    case CkptState::kIgnore: return "IGNORE";
  }
  return "?";
}

Bytes encode_image(const ProcessImage& img) {
  ByteWriter w;
  w.raw(ByteSpan(reinterpret_cast<const std::uint8_t*>(ProcessImage::kMagic.data()),
                 ProcessImage::kMagic.size()));
  w.u32(img.version);
  w.u64(img.epoch);
  w.u64(static_cast<std::uint64_t>(img.process));
  w.i64(img.virtual_time);
  w.u32(static_cast<std::uint32_t>(img.tasks.size()));
  for (const auto& t : img.tasks) {
    w.u64(static_cast<std::uint64_t>(t.rank));
    w.u8(t.kind == sched::TaskKind::kApp ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(t.lane));
    w.u64(t.blob.size());
    w.raw(t.blob);
  }
  w.u32(static_cast<std::uint32_t>(img.rails.size()));
  for (const auto& r : img.rails) {
    w.str16(r.rail);
    w.u32(static_cast<std::uint32_t>(r.endpoints.size()));
    for (const auto& e : r.endpoints) {
      w.u64(static_cast<std::uint64_t>(e.remote));
      w.u8(static_cast<std::uint8_t>(e.kind));
      w.str16(e.conn_info);
    }
  }
  std::uint32_t crc = crc32(w.bytes());
  w.u32(crc);
  return std::move(w).take();
}

ProcessImage decode_image(ByteSpan bytes) {
  if (bytes.size() < ProcessImage::kMagic.size() + 4) {
    throw Error(ErrorCode::kCrcMismatch, "image too short to hold a checksum");
  }
  ByteSpan body = bytes.first(bytes.size() - 4);
  std::uint32_t stored = ByteReader(bytes.last(4)).u32();
  if (crc32(body) != stored) throw Error(ErrorCode::kCrcMismatch, "process image checksum");

  ByteReader r(body);
  ByteSpan magic = r.raw(ProcessImage::kMagic.size());
  if (!std::equal(magic.begin(), magic.end(), ProcessImage::kMagic.begin())) {
    throw Error(ErrorCode::kFormatError, "bad image magic");
  }
  ProcessImage img;
  img.version = r.u32();
  if (img.version != ProcessImage::kVersion) {
    throw Error(ErrorCode::kFormatError, fmt::format("image version {}", img.version));
  }
  img.epoch = r.u64();
  img.process = static_cast<int>(r.u64());
  img.virtual_time = r.i64();
  std::uint32_t n_tasks = r.u32();
  for (std::uint32_t i = 0; i < n_tasks; ++i) {
    TaskImage t;
    t.rank = static_cast<int>(r.u64());
    t.kind = r.u8() == 0 ? sched::TaskKind::kApp : sched::TaskKind::kHelper;
    t.lane = static_cast<int>(r.u32());
    std::uint64_t len = r.u64();
    if (len > r.remaining()) throw Error(ErrorCode::kFormatError, "task blob overruns image");
    ByteSpan blob = r.raw(static_cast<std::size_t>(len));
    t.blob.assign(blob.begin(), blob.end());
    img.tasks.push_back(std::move(t));
  }
  std::uint32_t n_rails = r.u32();
  for (std::uint32_t i = 0; i < n_rails; ++i) {
    RailSection s;
    s.rail = r.str16();
    std::uint32_t n = r.u32();
    for (std::uint32_t j = 0; j < n; ++j) {
      EndpointImage e;
      e.remote = static_cast<int>(r.u64());
      e.kind = static_cast<rail::RouteKind>(r.u8());
      e.conn_info = r.str16();
      s.endpoints.push_back(std::move(e));
    }
    img.rails.push_back(std::move(s));
  }
  if (!r.done()) throw Error(ErrorCode::kFormatError, "trailing bytes in image");
  return img;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, fmt::format("cannot read {}", path.string()));
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

ProcessImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::kMissingImage, fmt::format("image {} not found", path.string()));
  }
  return decode_image(read_file(path));
}

void write_file_atomic(const std::filesystem::path& path, ByteSpan bytes) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, fmt::format("cannot write {}", tmp.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIoError, fmt::format("short write to {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, fmt::format("rename {}: {}", path.string(), ec.message()));
}

std::string encode_manifest(const Manifest& m) {
  std::string out;
  out += fmt::format("job_id={}\n", m.job_id);
  out += fmt::format("epoch={}\n", m.epoch);
  out += fmt::format("n_processes={}\n", m.n_processes);
  out += fmt::format("tasks_per_process={}\n", m.tasks_per_process);
  out += fmt::format("config_sha256={}\n", m.config_sha256);
  out += fmt::format("virtual_ticks={}\n", m.virtual_ticks);
  out += fmt::format("wall_unix_ms={}\n", m.wall_unix_ms);
  out += fmt::format("dynamic_routes={}\n", m.dynamic_routes);
  std::string images;
  for (const auto& i : m.images) images += (images.empty() ? "" : ",") + i;
  out += fmt::format("images={}\n", images);
  for (const auto& [k, v] : m.extra) out += fmt::format("{}={}\n", k, v);
  return out;
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw Error(ErrorCode::kFormatError, fmt::format("manifest {}='{}' is not a number", key, v));
  }
  return out;
}

}  // namespace

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  bool have_epoch = false, have_n = false, have_images = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kFormatError, fmt::format("manifest line '{}'", line));
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "job_id") {
      m.job_id = value;
    } else if (key == "epoch") {
      m.epoch = parse_number<std::uint64_t>(key, value);
      have_epoch = true;
    } else if (key == "n_processes") {
      m.n_processes = parse_number<int>(key, value);
      have_n = true;
    } else if (key == "tasks_per_process") {
      m.tasks_per_process = parse_number<int>(key, value);
    } else if (key == "config_sha256") {
      m.config_sha256 = value;
    } else if (key == "virtual_ticks") {
      m.virtual_ticks = parse_number<Ticks>(key, value);
    } else if (key == "wall_unix_ms") {
      m.wall_unix_ms = parse_number<std::int64_t>(key, value);
    } else if (key == "dynamic_routes") {
      m.dynamic_routes = parse_number<std::uint64_t>(key, value);
    } else if (key == "images") {
      have_images = true;
      std::string_view rest = value;
      while (!rest.empty()) {
        auto comma = rest.find(',');
        m.images.emplace_back(rest.substr(0, comma));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
      }
    } else {
      m.extra[key] = value;
    }
  }
  if (!have_epoch || !have_n || !have_images || m.job_id.empty()) {
    throw Error(ErrorCode::kFormatError, "manifest lacks job_id, epoch, n_processes or images");
  }
  if (m.images.size() != static_cast<std::size_t>(m.n_processes)) {
    throw Error(ErrorCode::kFormatError,
                fmt::format("manifest lists {} images for {} processes", m.images.size(),
                            m.n_processes));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::kMissingImage, fmt::format("manifest {} not found", path.string()));
  }
  Bytes b = read_file(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

std::filesystem::path epoch_dir(const std::filesystem::path& ckpt_dir, std::string_view job_id,
                                std::uint64_t epoch) {
  return ckpt_dir / std::string(job_id) / fmt::format("epoch-{}", epoch);
}

std::string image_name(int process) { return fmt::format("rank-{}.img", process); }

void apply_retention(const std::filesystem::path& ckpt_dir, std::string_view job_id,
                     std::size_t keep) {
  namespace fs = std::filesystem;
  fs::path root = ckpt_dir / std::string(job_id);
  std::error_code ec;
  if (!fs::is_directory(root, ec)) return;
  std::vector<std::pair<std::uint64_t, fs::path>> epochs;
  for (const auto& entry : fs::directory_iterator(root, ec)) {
    std::string name = entry.path().filename().string();
    if (!entry.is_directory() || !name.starts_with("epoch-")) continue;
    std::uint64_t n = 0;
    auto [p, err] = std::from_chars(name.data() + 6, name.data() + name.size(), n);
    if (err == std::errc() && p == name.data() + name.size()) epochs.emplace_back(n, entry.path());
  }
  std::sort(epochs.begin(), epochs.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = keep; i < epochs.size(); ++i) fs::remove_all(epochs[i].second, ec);
}

}  // namespace mcr::ckpt
