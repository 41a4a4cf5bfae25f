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

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kvrail/scenario.hpp"

using namespace kvrail;

namespace {
ScenarioConfig small_run(uint64_t steps = 150) {
    ScenarioConfig c = default_audit_config();
    c.steps = steps;
    c.warmup_steps = steps >= 100 ? 50 : 0;
    c.workload->requests = 2000;
    c.workload->concurrency = 16;
    return c;
}
} // namespace

TEST_CASE("scenario smoke: a short run completes and reports") {
    ScenarioConfig c = small_run();
    RunResult r = run_scenario(c);
    CHECK(r.records.size() == c.steps);
    CHECK(r.report.steps == c.steps - c.warmup_steps);
    CHECK(r.report.multi_commit_steps == 0);
    CHECK(r.report.shape_violations == 0);
    CHECK(r.report.recompiles == 0);
    CHECK(r.report.throughput > 0.0);
}

TEST_CASE("scenario determinism: identical seeds give byte-identical reports") {
    ScenarioConfig c = small_run();
    RunResult a = run_scenario(c);
    RunResult b = run_scenario(c);
    CHECK(report_to_json(a) == report_to_json(b));
    CHECK(steps_to_csv(a.records) == steps_to_csv(b.records));
}

TEST_CASE("far view with cap=0 runs as a dense near window") {
    ScenarioConfig c = small_run();
    c.far_view.enabled = true;
    c.far_view.cap = 0;
    c.far_view.near_window = 256;
    c.far_view.chunk_tokens = 128;
    c.pager.layers = 1;
    c.pager.kv_head_dim = 64;
    c.pager.elem_bytes = 4; // float lanes for summaries
    c.pager.page_bytes = 16384;
    RunResult r = run_scenario(c);
    CHECK(r.report.multi_commit_steps == 0);
    CHECK(r.records.back().far_trains == 0);
}

TEST_CASE("far view summarization stays committed through the frame path") {
    ScenarioConfig c = small_run(260);
    c.far_view.enabled = true;
    c.far_view.cap = 16;
    c.far_view.near_window = 64;
    c.far_view.chunk_tokens = 32;
    c.pager.layers = 1;
    c.pager.kv_head_dim = 64;
    c.pager.elem_bytes = 4;
    c.pager.page_bytes = 16384; // 32 tokens per page
    c.warmup_steps = 50;
    RunResult r = run_scenario(c);
    CHECK(r.report.multi_commit_steps == 0);
    // Far trains appear once histories outgrow the near window.
    uint32_t far = 0;
    for (const StepRecord &s : r.records)
        far += s.far_trains;
    CHECK(far > 0);
}

TEST_CASE("config files round-trip") {
    ScenarioConfig c = default_audit_config();
    c.label = "roundtrip";
    c.seed = 1234;
    c.regime = FragRegime::strong;
    c.transport.merge = false;
    std::string path =
        (std::filesystem::temp_directory_path() / "kvrail_cfg.json").string();
    write_file(path, config_to_json(c));
    ScenarioConfig d = config_from_json_file(path);
    CHECK(d.label == "roundtrip");
    CHECK(d.seed == 1234);
    CHECK(d.regime == FragRegime::strong);
    CHECK(d.transport.merge == false);
    CHECK(d.pager.page_bytes == c.pager.page_bytes);
    CHECK(config_to_json(d) == config_to_json(c));
    std::filesystem::remove(path);
}

TEST_CASE("config validation: workload and trace are mutually exclusive") {
    ScenarioConfig c = default_audit_config();
    c.trace_path = "x.csv";
    CHECK_THROWS_AS(c.validate(), Error);
    c.workload.reset();
    CHECK_NOTHROW(c.validate());
    c.trace_path.reset();
    CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("replay: window selection drives the run") {
    WorkloadSpec spec;
    spec.requests = 3000;
    spec.seed = 3;
    auto events = generate(spec);
    std::string path =
        (std::filesystem::temp_directory_path() / "kvrail_trace.csv").string();
    save_trace(path, events);

    ScenarioConfig c = default_audit_config();
    c.workload.reset();
    c.trace_path = path;
    c.replay_window_seconds = 30.0;
    c.steps = 150;
    c.warmup_steps = 50;
    RunResult r = run_scenario(c);
    CHECK(r.report.steps == 100);
    CHECK(r.report.multi_commit_steps == 0);
    std::filesystem::remove(path);
}
