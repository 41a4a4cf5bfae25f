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

#include "kvrail/sim_engine.hpp"

#include <algorithm>

namespace kvrail {

void CostModel::validate() const {
    if (dma_fixed_overhead <= 0 || dma_bandwidth <= 0 || kernel_base <= 0 ||
        kernel_per_slot <= 0 || submit_cost <= 0 || commit_cost <= 0)
        raise(Errc::bad_config, "cost model parameters must be positive");
}

SimEngine::SimEngine(CostModel model, uint32_t compiled_width)
    : model_(model), compiled_width_(compiled_width) {
    model_.validate();
}

StepRecord SimEngine::execute_step(Step step, const std::vector<DmaTrain> &trains,
                                   uint32_t observed_width, uint32_t live_sessions,
                                   uint64_t commits_observed, uint64_t emitted_tokens,
                                   const ArenaStats &arena) {
    if (observed_width != compiled_width_)
        raise(Errc::shape_violation, "visible width " + std::to_string(observed_width) +
                                         " != compiled width " +
                                         std::to_string(compiled_width_));
    if (commits_observed != live_sessions)
        raise(Errc::multi_commit, "step " + std::to_string(step) + " saw " +
                                      std::to_string(commits_observed) + " commits for " +
                                      std::to_string(live_sessions) + " live sessions");

    TransportStepStats ts = summarize_trains(trains, clock_);

    StepRecord r;
    r.step = step;
    r.live_sessions = live_sessions;
    r.trains = ts.trains;
    r.near_trains = ts.near_trains;
    r.far_trains = ts.far_trains;
    r.dma_bytes = ts.bytes;
    r.mean_train_bytes = ts.mean_train_bytes;
    r.max_hold = ts.max_hold_observed;
    r.submit_time = model_.submit_cost;
    r.commit_time = model_.commit_cost;
    r.commits = live_sessions > 0 ? static_cast<uint32_t>(commits_observed / live_sessions) : 0;
    r.emitted_tokens = emitted_tokens;
    r.reserved_bytes = arena.reserved_bytes;
    r.active_bytes = arena.active_bytes;

    double dma = model_.dma_time(ts.trains, ts.bytes);
    double kernel = model_.kernel_cost(observed_width);
    double body = model_.overlap ? std::max(dma, kernel) : dma + kernel;
    r.step_latency = body + model_.submit_cost + model_.commit_cost;

    clock_ += r.step_latency;
    ++steps_;
    return r;
}

std::vector<std::byte> reconstruct_view(const Pager &pager, SessionId session) {
    ViewDescriptor view = pager.active_view(session);
    const uint64_t tb = pager.config().token_bytes();
    std::vector<std::byte> out;
    out.resize(view.live_tokens * tb);
    uint64_t off = 0;
    for (const ViewEntry &e : view.entries) {
        pager.read_slots(e.block, e.slot_begin, static_cast<uint32_t>(e.tokens.size()),
                         out.data() + off);
        off += e.tokens.size() * tb;
    }
    return out;
}

uint64_t dense_kv_bytes_per_token(const PagerConfig &cfg, uint64_t history_tokens) {
    return cfg.token_bytes() * history_tokens;
}

uint64_t capped_kv_bytes_per_token(const PagerConfig &cfg, uint64_t history_tokens,
                                   uint32_t near_window) {
    return cfg.token_bytes() * std::min<uint64_t>(history_tokens, near_window);
}

} // namespace kvrail
