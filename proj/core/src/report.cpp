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

#include <fmt/format.h>

#include "mcr/bench.hpp"
#include "mcr/error.hpp"

namespace mcr::bench {

Breakdown overhead_breakdown(const RunRecord& reference, const RunRecord& measured) {
  if (reference.seed != measured.seed || reference.config != measured.config) {
    throw Error(ErrorCode::kMismatchedRuns,
                fmt::format("'{}' (seed {}) and '{}' (seed {}) are not a matched pair", reference.label,
                            reference.seed, measured.label, measured.seed));
  }
  Breakdown b;
  b.label = measured.label;
  b.total = measured.total;
  b.reference = reference.total;
  b.checkpoint = measured.ckpt;
  b.other = measured.total - reference.total - measured.ckpt;
  if (b.total != 0) {
    auto pct = [&](Ticks t) { return 100.0 * static_cast<double>(t) / static_cast<double>(b.total); };
    b.pct_reference = pct(b.reference);
    b.pct_checkpoint = pct(b.checkpoint);
    b.pct_other = pct(b.other);
  }
  return b;
}

Ticks checkpoint_extent(const std::vector<std::vector<std::pair<Ticks, Ticks>>>& per_rank) {
  std::size_t n = 0;
  for (const auto& r : per_rank) n = std::max(n, r.size());
  Ticks total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Ticks last_in = 0;
    Ticks last_out = 0;
    for (const auto& r : per_rank) {
      if (i >= r.size()) continue;
      last_in = std::max(last_in, r[i].first);
      last_out = std::max(last_out, r[i].second);
    }
    total += last_out - last_in;
  }
  return total;
}

Ticks checkpoint_extent(const std::vector<CkptSpan>& spans) {
  Ticks total = 0;
  for (const auto& s : spans) total += s.release - s.last_entry;
  return total;
}

std::string breakdown_csv(const std::vector<Breakdown>& rows) {
  std::string out =
      "label,total_ticks,reference_ticks,checkpoint_ticks,other_ticks,reference_pct,checkpoint_pct,"
      "other_pct\n";
  for (const auto& b : rows) {
    out += fmt::format("{},{},{},{},{},{:.3f},{:.3f},{:.3f}\n", b.label, b.total, b.reference, b.checkpoint,
                       b.other, b.pct_reference, b.pct_checkpoint, b.pct_other);
  }
  return out;
}

}  // namespace mcr::bench
