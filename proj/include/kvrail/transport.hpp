/* Copyright 2026 The kvrail Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <vector>

#include "kvrail/types.hpp"

namespace kvrail {

enum class TrainKind : uint8_t { near_window = 0, far_view = 1 };

struct TransportConfig {
    uint64_t merge_threshold = 131072; // tau, bytes
    double max_hold = 1.0;             // delta, simulated time units
    uint32_t max_trains_per_step = 2;  // audit bound for the benign regimes
    bool merge = true;
    void validate() const;
};

/// One physically contiguous region a step must transfer.
struct Descriptor {
    uint64_t phys_offset = 0; // bytes
    uint64_t length = 0;      // bytes, > 0
    TrainKind kind = TrainKind::near_window;
    double stage_time = 0.0;
    BlockId block = kInvalidBlock; // first block of the run
    SessionId session = 0;
};

enum class IssueReason : uint8_t { threshold, age, flush };

struct DmaTrain {
    TrainKind kind = TrainKind::near_window;
    uint64_t total_bytes = 0;
    double oldest_stage_time = 0.0;
    double issue_time = 0.0;
    IssueReason reason = IssueReason::flush;
    std::vector<Descriptor> descriptors;
};

/// A (block, slot range) piece of a staging need.
struct StagedSpan {
    BlockId block = kInvalidBlock;
    uint32_t slot_begin = 0;
    uint32_t slot_count = 0;
};

struct StageNeed {
    SessionId session = 0;
    TrainKind kind = TrainKind::near_window;
    std::vector<StagedSpan> spans;
};

/// Materialize descriptors: one per physically contiguous byte run within each
/// need. Runs from different needs are left separate; reduce() may merge them.
std::vector<Descriptor> stage(const std::vector<StageNeed> &needs, uint64_t page_bytes,
                              uint64_t token_bytes, double now);

/// Greedy merge of physically adjacent descriptors into trains.
///
/// Descriptors are ordered by (kind, physical offset); a train grows while the
/// next descriptor is byte-adjacent, its bytes stay below the threshold and its
/// oldest descriptor is younger than the hold limit. Trains closed by an
/// adjacency break are flushed at the end of the step. Kinds never mix. With
/// merging disabled every descriptor becomes its own train in input order.
std::vector<DmaTrain> reduce(std::vector<Descriptor> descriptors,
                             const TransportConfig &cfg, double now);

struct TransportStepStats {
    uint32_t trains = 0;
    uint32_t near_trains = 0;
    uint32_t far_trains = 0;
    uint64_t bytes = 0;
    double mean_train_bytes = 0.0;
    double max_hold_observed = 0.0;
};

TransportStepStats summarize_trains(const std::vector<DmaTrain> &trains, double now);

} // namespace kvrail
