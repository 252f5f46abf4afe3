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

#ifndef MCR_COST_MODEL_HPP_
#define MCR_COST_MODEL_HPP_

#include <cstdint>

namespace mcr {

// Virtual time unit. All simulated durations are integral ticks so that runs
// are bit-reproducible.
using Ticks = std::int64_t;

struct CostModel {
  Ticks compute_tick = 1;          // per unit of application work
  Ticks net_per_byte = 1;          // wire transfer
  Ticks local_write_per_byte = 1;  // node-local storage
  Ticks encode_per_byte = 1;       // erasure coding, per byte per parity shard
  Ticks ctx_switch = 5;            // user-level context switch
  Ticks pfs_per_byte = 4;          // shared parallel file system
  // Process-level switches cost ctx_switch * process_switch_multiplier when
  // the scheduler runs in process-comparison mode.
  Ticks process_switch_multiplier = 10;

  // Throws Error(kInvalidArgument) if any field is negative or the
  // multiplier is below 1.
  void validate() const;

  friend bool operator==(const CostModel&, const CostModel&) = default;
};

}  // namespace mcr

#endif  // MCR_COST_MODEL_HPP_
