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

#ifndef MCR_KVS_HPP_
#define MCR_KVS_HPP_

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

namespace mcr::config {

// Bootstrap key-value store standing in for a launcher's PMI service.
//
// put() stages a value; fence() is a barrier over all registered
// participants that publishes every staged value and returns the new epoch.
// get() only sees published values.
class Kvs {
 public:
  virtual ~Kvs() = default;

  virtual void put(std::string_view key, std::string_view value) = 0;
  // Throws Error(kKeyNotFound) for keys never published.
  virtual std::string get(std::string_view key) = 0;
  virtual std::uint64_t fence() = 0;
};

class InprocKvs final : public Kvs {
 public:
  explicit InprocKvs(int participants = 1);

  void put(std::string_view key, std::string_view value) override;
  std::string get(std::string_view key) override;
  std::uint64_t fence() override;

  std::uint64_t epoch() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  int participants_;
  int arrived_ = 0;
  std::uint64_t epoch_ = 0;
  std::map<std::string, std::string, std::less<>> staged_;
  std::map<std::string, std::string, std::less<>> published_;
};

// Localhost HTTP registry serving an InprocKvs. Listens on an ephemeral port
// of 127.0.0.1 until destroyed.
class KvsServer {
 public:
  explicit KvsServer(int participants = 1);
  ~KvsServer();
  KvsServer(const KvsServer&) = delete;
  KvsServer& operator=(const KvsServer&) = delete;

  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

// Client side of KvsServer.
class TcpKvs final : public Kvs {
 public:
  TcpKvs(std::string host, int port);
  ~TcpKvs() override;

  void put(std::string_view key, std::string_view value) override;
  std::string get(std::string_view key) override;
  std::uint64_t fence() override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mcr::config

#endif  // MCR_KVS_HPP_
