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

#include <cmath>

#include <fmt/format.h>

#include "mcr/ckpt.hpp"
#include "mcr/error.hpp"

namespace mcr::ckpt {

double checkpoint_period(double tc, double budget) {
  if (!(tc > 0) || !(budget > 0) || !std::isfinite(tc) || !std::isfinite(budget)) {
    throw Error(ErrorCode::kDomainError,
                fmt::format("checkpoint_period needs tc > 0 and budget > 0 (got {}, {})", tc, budget));
  }
  return tc / budget;
}

Overhead overhead(double ts, double tc, double tau) {
  if (!(ts > 0) || !(tau > 0) || !(tc >= 0) || !std::isfinite(ts) || !std::isfinite(tc) ||
      !std::isfinite(tau)) {
    throw Error(ErrorCode::kDomainError,
                fmt::format("overhead needs ts > 0, tc >= 0, tau > 0 (got {}, {}, {})", ts, tc, tau));
  }
  return Overhead{ts + (ts / tau) * tc, 1.0 + tc / tau};
}

}  // namespace mcr::ckpt
