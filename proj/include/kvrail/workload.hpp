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

#include "kvrail/types.hpp"

namespace kvrail {

struct WorkloadSpec {
    uint32_t requests = 10000;
    uint32_t concurrency = 64; // admission cap during simulation

    // Generated-length percentile targets (tokens).
    double p50 = 96.0;
    double p90 = 384.0;
    double p99 = 1024.0;

    // Share of arrivals inside the top 10% busiest 100 ms windows.
    double top_decile_share = 0.31;
    double hot_window_prob = 0.1;
    double arrivals_per_window = 1.9; // mean across hot and cold windows
    uint64_t window_ms = 100;

    // Quantile correlation within a window; drives bursty EOS completions.
    double cluster_correlation = 0.6;

    // Prompt-length mixture (log-uniform pieces).
    uint32_t prompt_min = 16;
    uint32_t prompt_max = 768;

    uint64_t seed = 1;

    void validate() const;
};

struct TraceEvent {
    uint64_t arrival_ms = 0;
    uint32_t prompt_tokens = 1;
    uint32_t generate_tokens = 1;
    uint64_t request_id = 0;
};

struct WorkloadAudit {
    double p50 = 0, p90 = 0, p99 = 0;
    double top_decile_share = 0;
    double eos_window_p50 = 0, eos_window_p90 = 0, eos_window_p99 = 0; // estimated
    bool percentiles_ok = false;
    bool concentration_ok = false;
    bool pass() const { return percentiles_ok && concentration_ok; }
};

/// Deterministic generator targeting the spec's length percentiles and
/// arrival concentration. The length law is a three-piece mixture: two
/// truncated geometric body pieces anchored at (p50, p90) and a truncated
/// lognormal tail anchored at p99, fitted in closed form at startup.
std::vector<TraceEvent> generate(const WorkloadSpec &spec);

/// Empirical audit of a stream against the spec's targets (10% relative on
/// length percentiles, +-5 points on the top-decile arrival share).
WorkloadAudit audit_workload(const std::vector<TraceEvent> &events, const WorkloadSpec &spec);

std::vector<TraceEvent> load_trace(const std::string &path);
void save_trace(const std::string &path, const std::vector<TraceEvent> &events);

/// Contiguous window of `seconds` maximizing arrival count; earliest on ties.
std::vector<TraceEvent> select_window(const std::vector<TraceEvent> &events, double seconds);

enum class FragRegime { contiguous, mild, strong, adversarial_random };

FragRegime parse_regime(const std::string &name);
const char *regime_name(FragRegime r);

/// Fraction of the arena left allocatable under a regime's pre-population.
double regime_free_fraction(FragRegime r);

/// Block indices a pre-population holder keeps occupied for the whole run.
std::vector<uint32_t> fragmentation_preset(FragRegime regime, uint32_t arena_pages,
                                           uint64_t seed);

uint64_t stream_hash(const std::vector<TraceEvent> &events);

} // namespace kvrail
