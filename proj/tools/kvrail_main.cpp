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

// Scenario runner: wires config -> workload -> pager/placement/far-view/
// transport -> simulated device -> metrics, one subcommand per experiment
// protocol.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kvrail/scenario.hpp"

using namespace kvrail;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<uint64_t> seed;
    std::optional<std::string> merge;    // on|off
    std::optional<std::string> far_view; // on|off
    std::optional<std::string> regime;
};

void add_common(CLI::App *cmd, CommonOpts &o) {
    cmd->add_option("--config", o.config_path, "scenario config file (JSON)");
    cmd->add_option("--seed", o.seed, "override the run seed");
    cmd->add_option("--out", o.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--merge", o.merge, "descriptor merging: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--far-view", o.far_view, "far-view summarization: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--regime", o.regime,
                    "fragmentation regime: contiguous|mild|strong|adversarial-random");
}

ScenarioConfig make_config(const CommonOpts &o) {
    ScenarioConfig cfg =
        o.config_path.empty() ? default_audit_config() : config_from_json_file(o.config_path);
    if (o.seed) {
        cfg.seed = *o.seed;
        if (cfg.workload)
            cfg.workload->seed = *o.seed;
    }
    if (o.merge)
        cfg.transport.merge = *o.merge == "on";
    if (o.far_view) {
        cfg.far_view.enabled = *o.far_view == "on";
        if (cfg.far_view.enabled && cfg.pager.elem_bytes != 4) {
            // Summaries need float lanes; switch to the float profile.
            cfg.pager.elem_bytes = 4;
            cfg.pager.layers = 1;
            cfg.pager.kv_head_dim = 64;
        }
    }
    if (o.regime)
        cfg.regime = parse_regime(*o.regime);
    return cfg;
}

void write_run_outputs(const std::string &dir, const RunResult &r) {
    std::filesystem::create_directories(dir);
    write_file(dir + "/report.json", report_to_json(r));
    write_file(dir + "/report.txt", report_to_text(r));
    write_file(dir + "/steps.csv", steps_to_csv(r.records));
    write_file(dir + "/config.json", config_to_json(r.config));
}

int check_audit(const RunResult &r) {
    if (r.report.multi_commit_steps != 0 || r.report.shape_violations != 0) {
        std::cerr << "invariant audit failed: " << r.report.multi_commit_steps
                  << " multi-commit steps, " << r.report.shape_violations
                  << " shape violations\n";
        return 1;
    }
    return 0;
}

int cmd_run(const CommonOpts &o) {
    ScenarioConfig cfg = make_config(o);
    RunResult r = run_scenario(cfg);
    write_run_outputs(o.out_dir + "/" + cfg.label, r);
    std::cout << report_to_text(r);
    return check_audit(r);
}

int cmd_sweep(const CommonOpts &o, const std::string &axis) {
    ScenarioConfig base = make_config(o);
    int rc = 0;
    if (axis == "concurrency") {
        if (!base.workload) {
            std::cerr << "concurrency sweep needs a generated workload\n";
            return 2;
        }
        for (uint32_t b : {16u, 32u, 64u, 128u}) {
            ScenarioConfig cfg = base;
            cfg.label = base.label + "-b" + std::to_string(b);
            cfg.workload->concurrency = b;
            cfg.workload->arrivals_per_window =
                base.workload->arrivals_per_window * b / base.workload->concurrency;
            RunResult r = run_scenario(cfg);
            write_run_outputs(o.out_dir + "/" + cfg.label, r);
            std::cout << report_to_text(r);
            rc |= check_audit(r);
            if (r.report.multi_commit_steps != 0)
                rc |= 1;
        }
    } else if (axis == "fragmentation") {
        for (FragRegime regime :
             {FragRegime::contiguous, FragRegime::mild, FragRegime::strong,
              FragRegime::adversarial_random}) {
            ScenarioConfig cfg = base;
            cfg.regime = regime;
            std::vector<TraceEvent> events = resolve_events(cfg);
            for (bool merge : {true, false}) {
                cfg.transport.merge = merge;
                cfg.label = base.label + "-" + regime_name(regime) +
                            (merge ? "-merge" : "-nomerge");
                RunResult r = run_scenario_on(cfg, events);
                write_run_outputs(o.out_dir + "/" + cfg.label, r);
                std::cout << report_to_text(r);
                rc |= check_audit(r);
            }
        }
    } else if (axis == "cap") {
        for (uint32_t cap : {0u, 16u, 32u, 64u, 128u}) {
            ScenarioConfig cfg = base;
            cfg.far_view.enabled = true;
            if (cfg.pager.elem_bytes != 4) {
                cfg.pager.elem_bytes = 4;
                cfg.pager.layers = 1;
                cfg.pager.kv_head_dim = 64;
            }
            cfg.far_view.cap = cap;
            cfg.label = base.label + "-cap" + std::to_string(cap);
            RunResult r = run_scenario(cfg);
            write_run_outputs(o.out_dir + "/" + cfg.label, r);
            std::cout << report_to_text(r);
            rc |= check_audit(r);
        }
    } else {
        std::cerr << "unknown sweep axis: " << axis << "\n";
        return 2;
    }
    return rc;
}

int cmd_attribution(const CommonOpts &o) {
    ScenarioConfig base = make_config(o);
    std::vector<TraceEvent> events = resolve_events(base);

    struct Row {
        const char *name;
        bool pager, merge, far;
    };
    const Row rows[] = {{"baseline", false, false, false},
                        {"+pager", true, false, false},
                        {"+pager+merge", true, true, false},
                        {"+pager+merge+far-view", true, true, true}};
    std::vector<RunResult> results;
    for (const Row &row : rows) {
        ScenarioConfig cfg = base;
        cfg.label = row.name;
        cfg.pager_enabled = row.pager;
        cfg.transport.merge = row.merge;
        cfg.far_view.enabled = row.far;
        if (row.far && cfg.pager.elem_bytes != 4) {
            cfg.pager.elem_bytes = 4;
            cfg.pager.layers = 1;
            cfg.pager.kv_head_dim = 64;
            cfg.far_view.near_window = 128;
            cfg.far_view.cap = 16;
            cfg.far_view.chunk_tokens = 32;
        }
        RunResult r = run_scenario_on(cfg, events);
        write_run_outputs(o.out_dir + "/attribution/" + row.name, r);
        results.push_back(std::move(r));
    }

    char buf[256];
    std::string table;
    table += "configuration            throughput     p99     reserved MiB   trains/step\n";
    for (const RunResult &r : results) {
        std::snprintf(buf, sizeof(buf), "%-24s %10.2f %8.3f %14.1f %13.2f\n",
                      r.report.label.c_str(), r.report.throughput, r.report.latency_p99,
                      r.report.mean_reserved_bytes / 1048576.0, r.report.trains_per_step);
        table += buf;
    }
    for (size_t i = 1; i < results.size(); ++i) {
        DeltaReport d = compare(results[0].report, results[i].report);
        table += "\n" + delta_to_text(d);
    }
    std::filesystem::create_directories(o.out_dir + "/attribution");
    write_file(o.out_dir + "/attribution/table.txt", table);
    std::cout << table;
    int rc = 0;
    for (const RunResult &r : results)
        rc |= check_audit(r);
    return rc;
}

int cmd_replay(const CommonOpts &o, const std::string &trace, double window_s) {
    ScenarioConfig cfg = make_config(o);
    cfg.workload.reset();
    cfg.trace_path = trace;
    cfg.replay_window_seconds = window_s;
    cfg.label = "replay";
    RunResult r = run_scenario(cfg);
    write_run_outputs(o.out_dir + "/replay", r);
    std::cout << report_to_text(r);
    return check_audit(r);
}

int cmd_audit(const CommonOpts &o) {
    // Fast invariants-only pass: a short run plus the workload self-audit.
    ScenarioConfig cfg = make_config(o);
    cfg.steps = std::min<uint64_t>(cfg.steps, 400);
    cfg.warmup_steps = std::min<Step>(cfg.warmup_steps, 100);
    RunResult r = run_scenario(cfg);
    std::printf("single-commit steps : %llu\n",
                (unsigned long long)r.report.total_commit_steps);
    std::printf("multi-commit steps  : %llu\n",
                (unsigned long long)r.report.multi_commit_steps);
    std::printf("shape violations    : %llu\n",
                (unsigned long long)r.report.shape_violations);
    std::printf("recompiles          : %llu\n", (unsigned long long)r.report.recompiles);
    if (cfg.workload)
        std::printf("workload audit      : %s\n", r.workload_audit.pass() ? "pass" : "FAIL");
    return check_audit(r);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"paged KV transport simulator"};
    app.require_subcommand(1);

    CommonOpts run_opts, sweep_opts, attr_opts, replay_opts, audit_opts;
    std::string sweep_axis = "concurrency";
    std::string replay_trace;
    double replay_window = 60.0;

    CLI::App *run = app.add_subcommand("run", "execute one scenario");
    add_common(run, run_opts);

    CLI::App *sweep = app.add_subcommand("sweep", "run a parameter sweep");
    add_common(sweep, sweep_opts);
    sweep->add_option("--axis", sweep_axis, "concurrency|fragmentation|cap")
        ->capture_default_str();

    CLI::App *attribution =
        app.add_subcommand("attribution", "four-configuration mechanism ladder");
    add_common(attribution, attr_opts);

    CLI::App *replay = app.add_subcommand("replay", "replay the densest trace window");
    add_common(replay, replay_opts);
    replay->add_option("--trace", replay_trace, "trace CSV path")->required();
    replay->add_option("--window-seconds", replay_window, "window length")
        ->capture_default_str();

    CLI::App *audit = app.add_subcommand("audit", "fast invariants-only check");
    add_common(audit, audit_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(run_opts);
        if (sweep->parsed())
            return cmd_sweep(sweep_opts, sweep_axis);
        if (attribution->parsed())
            return cmd_attribution(attr_opts);
        if (replay->parsed())
            return cmd_replay(replay_opts, replay_trace, replay_window);
        if (audit->parsed())
            return cmd_audit(audit_opts);
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
