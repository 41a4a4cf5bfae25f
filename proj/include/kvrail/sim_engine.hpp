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

#include "kvrail/pager.hpp"
#include "kvrail/transport.hpp"
#include "kvrail/types.hpp"

namespace kvrail {

/// Linear device cost model. Kernel time depends only on the visible width,
/// never on total history length.
struct CostModel {
    double dma_fixed_overhead = 1.0;   // per train
    double dma_bandwidth = 131072.0;   // bytes per time unit
    double kernel_base = 4.0;
    double kernel_per_slot = 0.004;
    double submit_cost = 0.05;
    double commit_cost = 0.05;
    bool overlap = true; // overlap DMA with compute (max) or serialize (sum)
    void validate() const;

    double kernel_cost(uint32_t visible_width) const {
        return kernel_base + kernel_per_slot * visible_width;
    }
    double dma_time(uint32_t trains, uint64_t bytes) const {
        return trains * dma_fixed_overhead + static_cast<double>(bytes) / dma_bandwidth;
    }
};

struct StepRecord {
    Step step = 0;
    uint32_t live_sessions = 0;
    uint32_t trains = 0;
    uint32_t near_trains = 0;
    uint32_t far_trains = 0;
    uint64_t dma_bytes = 0;
    double mean_train_bytes = 0.0;
    double max_hold = 0.0;
    double submit_time = 0.0;
    double commit_time = 0.0;
    double step_latency = 0.0;
    uint64_t reserved_bytes = 0;
    uint64_t active_bytes = 0;
    uint32_t commits = 1; // frame commits this step per session (audit)
    uint64_t emitted_tokens = 0;
};

/// Fixed-shape device stub: checks the interface invariants every step and
/// charges the linear cost model.
class SimEngine {
public:
    SimEngine(CostModel model, uint32_t compiled_width);

    /// `commits_observed` is the step's frame-commit count across live
    /// sessions; anything other than exactly one commit per live session is a
    /// fatal interface violation.
    StepRecord execute_step(Step step, const std::vector<DmaTrain> &trains,
                            uint32_t observed_width, uint32_t live_sessions,
                            uint64_t commits_observed, uint64_t emitted_tokens,
                            const ArenaStats &arena);

    double clock() const { return clock_; }
    uint32_t compiled_width() const { return compiled_width_; }
    uint64_t steps_executed() const { return steps_; }

private:
    CostModel model_;
    uint32_t compiled_width_;
    double clock_ = 0.0;
    uint64_t steps_ = 0;
};

/// Walk a session's committed view and gather its payload in logical order.
/// Logical gaps (trimmed ranges) are skipped; the result concatenates the
/// mapped ranges' bytes.
std::vector<std::byte> reconstruct_view(const Pager &pager, SessionId session);

/// Dense per-token KV traffic: 2 * L * d_kv * b * T bytes.
uint64_t dense_kv_bytes_per_token(const PagerConfig &cfg, uint64_t history_tokens);

/// Capped working set: constant once history exceeds the near window.
uint64_t capped_kv_bytes_per_token(const PagerConfig &cfg, uint64_t history_tokens,
                                   uint32_t near_window);

} // namespace kvrail
