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

#include "mcr/kvs.hpp"

#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "mcr/error.hpp"

namespace mcr::config {

InprocKvs::InprocKvs(int participants) : participants_(participants) {
  if (participants < 1) throw Error(ErrorCode::kInvalidArgument, "kvs needs >= 1 participant");
}

void InprocKvs::put(std::string_view key, std::string_view value) {
  if (key.empty()) throw Error(ErrorCode::kInvalidArgument, "kvs key must be nonempty");
  std::lock_guard lock(mu_);
  staged_.insert_or_assign(std::string(key), std::string(value));
}

std::string InprocKvs::get(std::string_view key) {
  if (key.empty()) throw Error(ErrorCode::kInvalidArgument, "kvs key must be nonempty");
  std::lock_guard lock(mu_);
  auto it = published_.find(key);
  if (it == published_.end()) {
    throw Error(ErrorCode::kKeyNotFound, fmt::format("kvs key '{}'", key));
  }
  return it->second;
}

std::uint64_t InprocKvs::fence() {
  std::unique_lock lock(mu_);
  std::uint64_t target = epoch_ + 1;
  if (++arrived_ == participants_) {
    for (auto& [k, v] : staged_) published_.insert_or_assign(k, std::move(v));
    staged_.clear();
    arrived_ = 0;
    epoch_ = target;
    cv_.notify_all();
  } else {
    cv_.wait(lock, [&] { return epoch_ >= target; });
  }
  return target;
}

std::uint64_t InprocKvs::epoch() const {
  std::lock_guard lock(mu_);
  return epoch_;
}

struct KvsServer::Impl {
  explicit Impl(int participants) : store(participants) {}

  InprocKvs store;
  httplib::Server server;
  std::thread thread;
};

KvsServer::KvsServer(int participants) : impl_(std::make_unique<Impl>(participants)) {
  auto& svr = impl_->server;
  // fence blocks until every participant arrives, so each one needs a worker.
  svr.new_task_queue = [participants] {
    return new httplib::ThreadPool(static_cast<std::size_t>(participants) + 2);
  };
  InprocKvs* store = &impl_->store;
  svr.Post("/put", [store](const httplib::Request& req, httplib::Response& res) {
    try {
      store->put(req.get_param_value("key"), req.body);
      res.set_content("ok", "text/plain");
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  });
  svr.Get("/get", [store](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(store->get(req.get_param_value("key")), "text/plain");
    } catch (const Error& e) {
      res.status = e.code() == ErrorCode::kKeyNotFound ? 404 : 400;
      res.set_content(e.what(), "text/plain");
    }
  });
  svr.Post("/fence", [store](const httplib::Request&, httplib::Response& res) {
    res.set_content(std::to_string(store->fence()), "text/plain");
  });
  port_ = svr.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw Error(ErrorCode::kIoError, "kvs registry could not bind to 127.0.0.1");
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
}

KvsServer::~KvsServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

struct TcpKvs::Impl {
  Impl(const std::string& host, int port) : client(host, port) {
    client.set_read_timeout(60, 0);
  }
  httplib::Client client;
};

TcpKvs::TcpKvs(std::string host, int port) : impl_(std::make_unique<Impl>(host, port)) {}

TcpKvs::~TcpKvs() = default;

namespace {

[[noreturn]] void transport_failure(std::string_view op, const httplib::Result& r) {
  throw Error(ErrorCode::kIoError,
              fmt::format("kvs {} failed: {}", op, r ? std::to_string(r->status)
                                                     : httplib::to_string(r.error())));
}

}  // namespace

void TcpKvs::put(std::string_view key, std::string_view value) {
  if (key.empty()) throw Error(ErrorCode::kInvalidArgument, "kvs key must be nonempty");
  auto r = impl_->client.Post("/put?key=" + httplib::detail::encode_query_param(std::string(key)),
                              std::string(value), "application/octet-stream");
  if (!r || r->status != 200) transport_failure("put", r);
}

std::string TcpKvs::get(std::string_view key) {
  if (key.empty()) throw Error(ErrorCode::kInvalidArgument, "kvs key must be nonempty");
  auto r = impl_->client.Get("/get?key=" + httplib::detail::encode_query_param(std::string(key)));
  if (r && r->status == 404) throw Error(ErrorCode::kKeyNotFound, fmt::format("kvs key '{}'", key));
  if (!r || r->status != 200) transport_failure("get", r);
  return r->body;
}

std::uint64_t TcpKvs::fence() {
  auto r = impl_->client.Post("/fence", "", "text/plain");
  if (!r || r->status != 200) transport_failure("fence", r);
  return std::stoull(r->body);
}

}  // namespace mcr::config
