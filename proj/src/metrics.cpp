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

#include "kvrail/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace kvrail {

double percentile_nearest_rank(std::vector<double> values, double q) {
    if (values.empty())
        raise(Errc::empty_run, "percentile of empty sample");
    std::sort(values.begin(), values.end());
    size_t n = values.size();
    // floor(q*n)+1 so a lone extreme still lands inside the top fractile.
    size_t rank = static_cast<size_t>(std::floor(q * static_cast<double>(n))) + 1;
    if (rank > n)
        rank = n;
    return values[rank - 1];
}

RunReport aggregate(const std::vector<StepRecord> &records, Step warmup_cutoff) {
    RunReport r;
    std::vector<double> latencies;
    std::vector<double> widths;
    double total_time = 0.0, control_time = 0.0;
    uint64_t tokens = 0, trains = 0, bytes = 0;
    double reserved_sum = 0.0, active_sum = 0.0, ratio_sum = 0.0;
    double width_sum = 0.0, width_sq = 0.0, width_max = 0.0;

    for (const StepRecord &s : records) {
        if (s.step < warmup_cutoff)
            continue;
        ++r.steps;
        latencies.push_back(s.step_latency);
        total_time += s.step_latency;
        control_time += s.submit_time + s.commit_time;
        tokens += s.emitted_tokens;
        trains += s.trains;
        bytes += s.dma_bytes;
        r.max_hold_observed = std::max(r.max_hold_observed, s.max_hold);
        reserved_sum += static_cast<double>(s.reserved_bytes);
        active_sum += static_cast<double>(s.active_bytes);
        if (s.active_bytes > 0)
            ratio_sum += static_cast<double>(s.reserved_bytes) / s.active_bytes;
        widths.push_back(s.live_sessions);
        width_sum += s.live_sessions;
        width_sq += static_cast<double>(s.live_sessions) * s.live_sessions;
        width_max = std::max(width_max, static_cast<double>(s.live_sessions));
        if (s.live_sessions > 0) {
            ++r.total_commit_steps;
            if (s.commits > 1)
                ++r.multi_commit_steps;
        }
        r.final_reserved_bytes = s.reserved_bytes;
        r.final_active_bytes = s.active_bytes;
    }
    if (r.steps == 0)
        raise(Errc::empty_run, "no post-warmup step records");

    r.throughput = total_time > 0 ? static_cast<double>(tokens) / total_time : 0.0;
    r.latency_p50 = percentile_nearest_rank(latencies, 0.50);
    r.latency_p99 = percentile_nearest_rank(latencies, 0.99);
    r.latency_p999 = percentile_nearest_rank(latencies, 0.999);
    r.submit_share = total_time > 0 ? control_time / total_time : 0.0;
    r.trains_per_step = static_cast<double>(trains) / r.steps;
    r.mean_train_bytes = trains > 0 ? static_cast<double>(bytes) / trains : 0.0;
    r.mean_reserved_bytes = reserved_sum / r.steps;
    r.mean_active_bytes = active_sum / r.steps;
    r.reserved_to_active = ratio_sum / r.steps;

    double mean_w = width_sum / r.steps;
    r.live_width_mean = mean_w;
    if (mean_w > 0) {
        double var = width_sq / r.steps - mean_w * mean_w;
        r.live_width_cv = std::sqrt(std::max(0.0, var)) / mean_w;
        r.live_width_max_to_mean = width_max / mean_w;
    }
    return r;
}

const MetricDelta *DeltaReport::find(const std::string &name) const {
    for (const MetricDelta &d : deltas)
        if (d.name == name)
            return &d;
    return nullptr;
}

DeltaReport compare(const RunReport &a, const RunReport &b) {
    if (a.workload_hash != b.workload_hash)
        raise(Errc::workload_mismatch, "runs were driven by different workloads");
    DeltaReport out;
    out.label_a = a.label;
    out.label_b = b.label;
    auto add = [&](const std::string &name, double va, double vb) {
        MetricDelta d;
        d.name = name;
        d.a = va;
        d.b = vb;
        d.ratio = va != 0.0 ? vb / va : 0.0;
        out.deltas.push_back(d);
    };
    add("throughput", a.throughput, b.throughput);
    add("latency_p50", a.latency_p50, b.latency_p50);
    add("latency_p99", a.latency_p99, b.latency_p99);
    add("latency_p999", a.latency_p999, b.latency_p999);
    add("submit_share", a.submit_share, b.submit_share);
    add("trains_per_step", a.trains_per_step, b.trains_per_step);
    add("mean_train_bytes", a.mean_train_bytes, b.mean_train_bytes);
    add("mean_reserved_bytes", a.mean_reserved_bytes, b.mean_reserved_bytes);
    add("mean_active_bytes", a.mean_active_bytes, b.mean_active_bytes);
    add("reserved_to_active", a.reserved_to_active, b.reserved_to_active);
    return out;
}

} // namespace kvrail
