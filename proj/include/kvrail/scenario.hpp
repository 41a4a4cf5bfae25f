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

#include <optional>
#include <string>
#include <vector>

#include "kvrail/far_view.hpp"
#include "kvrail/metrics.hpp"
#include "kvrail/pager.hpp"
#include "kvrail/placement.hpp"
#include "kvrail/sim_engine.hpp"
#include "kvrail/transport.hpp"
#include "kvrail/workload.hpp"

namespace kvrail {

/// Full description of one simulated serving run.
struct ScenarioConfig {
    std::string label = "run";

    PagerConfig pager;
    PlacementConfig placement;
    TransportConfig transport;
    FarViewConfig far_view;
    CostModel cost;

    // Exactly one of the two drives the run.
    std::optional<WorkloadSpec> workload;
    std::optional<std::string> trace_path;
    double replay_window_seconds = 0.0; // >0: replay the densest window only

    bool pager_enabled = true; // false: static worst-case arena baseline
    FragRegime regime = FragRegime::contiguous;

    uint64_t steps = 2000;
    Step warmup_steps = 100;
    uint64_t seed = 1;
    double step_ms = 20.0; // arrival pacing: one decode step per this many ms

    // Transport shaping. The staged path reserves writes in `span_blocks`-page
    // spans and re-stages one span per refresh; the demand path re-packs
    // `demand_gather_tokens` trailing tokens per refresh as exact byte ranges.
    uint32_t span_blocks = 9;
    uint32_t staged_refresh_period = 32;
    uint32_t demand_refresh_period = 16;
    uint32_t demand_gather_tokens = 46;

    // Prefix sharing at admission.
    double share_probability = 0.3;
    uint32_t shared_prefix_tokens = 64;

    // Static-arena sizing for the baseline (tokens per session slot).
    uint32_t static_slot_tokens = 2816;

    uint32_t arena_headroom_pages = 1024;
    std::optional<uint32_t> arena_pages_override;

    // EOS-burst injection (criterion-style stress): at `eos_burst_step` force
    // `eos_burst_fraction` of live sessions to finish, then halt admission.
    Step eos_burst_step = 0; // 0 = off
    double eos_burst_fraction = 0.5;

    void validate() const;
    uint32_t compiled_width() const {
        return far_view.enabled ? far_view.near_window + far_view.cap
                                : far_view.near_window;
    }
};

struct RunResult {
    ScenarioConfig config;
    RunReport report;
    std::vector<StepRecord> records;
    WorkloadAudit workload_audit;
    WorkCounters pager_counters;
};

/// Execute one scenario end to end. The generated workload is self-audited
/// and rejected before simulation when it misses its targets.
RunResult run_scenario(const ScenarioConfig &cfg);

/// Resolve the event stream a scenario will run (generation, trace load and
/// window selection included), so callers can share it across paired runs.
std::vector<TraceEvent> resolve_events(const ScenarioConfig &cfg);
RunResult run_scenario_on(const ScenarioConfig &cfg, const std::vector<TraceEvent> &events);

// --- report I/O -----------------------------------------------------------

std::string report_to_json(const RunResult &result);
std::string report_to_text(const RunResult &result);
std::string steps_to_csv(const std::vector<StepRecord> &records);
std::string delta_to_text(const DeltaReport &d);

void write_file(const std::string &path, const std::string &content);

// --- config I/O -----------------------------------------------------------

ScenarioConfig config_from_json_file(const std::string &path);
std::string config_to_json(const ScenarioConfig &cfg);

/// The calibrated mixed-length operating point used by the transport audits.
ScenarioConfig default_audit_config();

} // namespace kvrail
