// Copyright 2026 The mcr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MCR_ERROR_HPP_
#define MCR_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace mcr {

enum class ErrorCode {
  kInvalidArgument,
  kFormatError,
  kIoError,
  // configuration and bootstrap
  kSyntaxError,
  kDanglingReference,
  kNoRingRail,
  kKeyNotFound,
  // multirail
  kNoRouteToProcess,
  kConnectTimeout,
  kRailClosed,
  kRailBusy,
  kUnknownRail,
  kPeerFailed,
  // signaling
  kNoProgress,
  kTtlExceeded,
  // scheduler
  kUnknownLane,
  kDeadlock,
  // transparent checkpointing
  kCrcMismatch,
  kConfigMismatch,
  kMissingImage,
  kDomainError,
  // multilevel checkpointing
  kConfigError,
  kDuplicateId,
  kStorageFull,
  kHelperBacklog,
  kInsufficientShards,
  kUnrecoverable,
  // benchmarks
  kInvalidStep,
  kMismatchedRuns,
};

std::string_view error_code_name(ErrorCode code);

// All runtime failures surface as this exception type; callers branch on
// code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mcr

#endif  // MCR_ERROR_HPP_
