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
#include <string>
#include <vector>

#include "kvrail/sim_engine.hpp"
#include "kvrail/types.hpp"

namespace kvrail {

struct RunReport {
    std::string label;
    uint64_t workload_hash = 0;
    uint64_t seed = 0;
    uint64_t steps = 0; // post-warmup

    double throughput = 0.0; // emitted tokens / simulated time
    double latency_p50 = 0.0;
    double latency_p99 = 0.0;
    double latency_p999 = 0.0;
    double submit_share = 0.0;

    double trains_per_step = 0.0;
    double mean_train_bytes = 0.0;
    double max_hold_observed = 0.0;

    double mean_reserved_bytes = 0.0;
    double mean_active_bytes = 0.0;
    uint64_t final_reserved_bytes = 0;
    uint64_t final_active_bytes = 0;
    double reserved_to_active = 0.0; // mean ratio over post-warmup steps

    double live_width_mean = 0.0;
    double live_width_cv = 0.0;
    double live_width_max_to_mean = 0.0;

    // Invariant audit.
    uint64_t total_commit_steps = 0; // steps with live sessions
    uint64_t multi_commit_steps = 0; // fatal if nonzero; recorded for the report
    uint64_t shape_violations = 0;
    uint64_t recompiles = 0; // fixed shape: zero by construction
};

/// Nearest-rank percentile of an unsorted sample (q in (0,1]).
double percentile_nearest_rank(std::vector<double> values, double q);

/// Aggregate post-warmup step records. Throws EmptyRun when nothing remains
/// after the cutoff.
RunReport aggregate(const std::vector<StepRecord> &records, Step warmup_cutoff);

struct MetricDelta {
    std::string name;
    double a = 0.0;
    double b = 0.0;
    double ratio = 0.0; // b / a
};

struct DeltaReport {
    std::string label_a, label_b;
    std::vector<MetricDelta> deltas;
    const MetricDelta *find(const std::string &name) const;
};

/// Pairwise comparison of two runs over the same workload.
DeltaReport compare(const RunReport &a, const RunReport &b);

} // namespace kvrail
