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

#include "mcr/error.hpp"

#include <fmt/format.h>

namespace mcr {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kSyntaxError: return "SyntaxError";
    case ErrorCode::kDanglingReference: return "DanglingReference";
    case ErrorCode::kNoRingRail: return "NoRingRail";
    case ErrorCode::kKeyNotFound: return "KeyNotFound";
    case ErrorCode::kNoRouteToProcess: return "NoRouteToProcess";
    case ErrorCode::kConnectTimeout: return "ConnectTimeout";
    case ErrorCode::kRailClosed: return "RailClosed";
    case ErrorCode::kRailBusy: return "RailBusy";
    case ErrorCode::kUnknownRail: return "UnknownRail";
    case ErrorCode::kPeerFailed: return "PeerFailed";
    case ErrorCode::kNoProgress: return "NoProgress";
    case ErrorCode::kTtlExceeded: return "TtlExceeded";
    case ErrorCode::kUnknownLane: return "UnknownLane";
    case ErrorCode::kDeadlock: return "Deadlock";
    case ErrorCode::kCrcMismatch: return "CrcMismatch";
    case ErrorCode::kConfigMismatch: return "ConfigMismatch";
    case ErrorCode::kMissingImage: return "MissingImage";
    case ErrorCode::kDomainError: return "DomainError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kStorageFull: return "StorageFull";
    case ErrorCode::kHelperBacklog: return "HelperBacklog";
    case ErrorCode::kInsufficientShards: return "InsufficientShards";
    case ErrorCode::kUnrecoverable: return "Unrecoverable";
    case ErrorCode::kInvalidStep: return "InvalidStep";
    case ErrorCode::kMismatchedRuns: return "MismatchedRuns";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(fmt::format("{}: {}", error_code_name(code), message)),
      code_(code) {}

}  // namespace mcr
